use dlpls::bayes::{gibbs_last_layer, posterior, NoisePrior};
use dlpls::brillinger::{fit_deep_recursive, fit_single_index, stein_k, Activation, Bandwidth, GaussianInputs};
use dlpls::dataset::{expand_features, standardize, ExpansionSpec, StandardizedMatrix, Standardizer};
use dlpls::diagnostics::{biplot, correlation_circle, BiplotScaling};
use dlpls::inner::tree::{best_split_sorted, brute_force_split, TreeConfig};
use dlpls::inner::{fit_inner, predict_pipeline, GpConfig, InnerSpec, MlpConfig, TreeConfig as InnerTreeConfig};
use dlpls::linalg::{column_means, ols, ridge, svd, sym_eigen, RidgePenalty};
use dlpls::pls::{fit_pls, helland_beta, PlsConfig, PlsModel};
use dlpls::shrinkage::{method_coefficients, ridge_factors, scale_factors, EigenBasis, Method};
use dlpls::simulation::{generate, SimSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(seed: u64, n: usize, m: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng))
}

fn orthogonal(seed: u64, p: usize) -> DMatrix<f64> {
    gaussian(seed, p, p).qr().q()
}

/// Centred but unscaled block, so rotations of the inputs stay rotations.
fn centred(x: &DMatrix<f64>) -> StandardizedMatrix {
    let means = column_means(x);
    let values = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - means[j]);
    StandardizedMatrix {
        values,
        params: Standardizer {
            means: means.as_slice().to_vec(),
            scales: vec![1.0; x.ncols()],
            degenerate: vec![false; x.ncols()],
        },
    }
}

#[test]
fn expansion_width_matches_closed_form() {
    for p in 1..=20 {
        let x = gaussian(p as u64, 3, p);
        let wide = expand_features(&x, &ExpansionSpec::full()).unwrap();
        assert_eq!(wide.ncols(), 2 * p + p * (p - 1) / 2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stored_standardization_reproduces_block(seed in 0u64..1000, n in 3usize..30, p in 1usize..6) {
        let x = gaussian(seed, n, p) * 3.0;
        let s = standardize(&x);
        prop_assert_eq!(s.params.apply(&x).unwrap(), s.values);
    }

    #[test]
    fn svd_and_eigen_agree(seed in 0u64..1000) {
        let a = gaussian(seed, 10, 6);
        let s = svd(&a).unwrap().singular_values;
        let e = sym_eigen(&(a.transpose() * &a)).unwrap().eigenvalues;
        for j in 0..6 {
            prop_assert!((s[j] * s[j] - e[j]).abs() <= 1e-8 * e[0]);
        }
    }

    #[test]
    fn ols_permutation_equivariance(seed in 0u64..1000, shift in 1usize..5) {
        let x = gaussian(seed, 30, 5);
        let y = gaussian(seed + 1, 30, 2);
        let perm: Vec<usize> = (0..5).map(|j| (j + shift) % 5).collect();
        let xp = DMatrix::from_fn(30, 5, |i, j| x[(i, perm[j])]);
        let b = ols(&x, &y).unwrap().coefficients;
        let bp = ols(&xp, &y).unwrap().coefficients;
        for j in 0..5 {
            prop_assert!((bp.row(j) - b.row(perm[j])).amax() < 1e-10);
        }
    }

    #[test]
    fn ridge_is_continuous_in_lambda(seed in 0u64..1000, lambda in 0.0f64..10.0) {
        let x = gaussian(seed, 25, 4);
        let y = gaussian(seed + 7, 25, 1);
        let a = ridge(&x, &y, lambda, &RidgePenalty::Identity).unwrap();
        let b = ridge(&x, &y, lambda + 1e-6, &RidgePenalty::Identity).unwrap();
        prop_assert!((a - b).norm() < 1e-5);
    }

    #[test]
    fn pls_scores_orthogonal_and_weights_orthonormal(seed in 0u64..1000, l in 1usize..5) {
        let x = gaussian(seed, 40, 5);
        let y = &x * gaussian(seed + 1, 5, 2) + gaussian(seed + 2, 40, 2);
        let m = PlsModel::fit(&x, &y, &PlsConfig::new(l)).unwrap();
        let tt = m.x_scores.transpose() * &m.x_scores;
        let scale = tt.diagonal().amax();
        for i in 0..l {
            for j in 0..l {
                if i != j {
                    prop_assert!(tt[(i, j)].abs() <= 1e-8 * scale);
                }
            }
        }
        let ww = &m.weights * m.weights.transpose();
        prop_assert!((ww - DMatrix::identity(l, l)).amax() < 1e-8);
    }

    #[test]
    fn full_rank_pls_fits_like_ols(seed in 0u64..1000, q in 1usize..4) {
        let x = gaussian(seed, 50, 4);
        let y = &x * gaussian(seed + 3, 4, q) + gaussian(seed + 4, 50, q);
        let m = PlsModel::fit(&x, &y, &PlsConfig::new(4)).unwrap();
        let ones = DMatrix::from_element(50, 1, 1.0);
        let design = DMatrix::from_fn(50, 5, |i, j| if j == 0 { ones[(i, 0)] } else { x[(i, j - 1)] });
        let fitted = &design * ols(&design, &y).unwrap().coefficients;
        prop_assert!((m.predict(&x).unwrap() - fitted).amax() < 1e-6);
    }

    #[test]
    fn helland_matches_nipals(seed in 0u64..1000, p in 2usize..7) {
        let x = gaussian(seed, 60, p);
        let y = &x * gaussian(seed + 5, p, 1) + gaussian(seed + 6, 60, 1);
        let xs = standardize(&x);
        let ys = standardize(&y);
        let yv = ys.values.column(0).into_owned();
        for k in 1..=p {
            let h = helland_beta(&xs, &yv, k).unwrap();
            let m = fit_pls(&xs, &ys, &PlsConfig::new(k)).unwrap();
            prop_assert!((h.beta - m.coefficients().standardized.column(0)).amax() < 1e-6);
        }
    }

    #[test]
    fn pls_permutation_equivariance(seed in 0u64..1000, shift in 1usize..4, l in 1usize..4) {
        let x = gaussian(seed, 40, 4);
        let y = &x * gaussian(seed + 8, 4, 1) + gaussian(seed + 9, 40, 1);
        let perm: Vec<usize> = (0..4).map(|j| (j + shift) % 4).collect();
        let xp = DMatrix::from_fn(40, 4, |i, j| x[(i, perm[j])]);
        let b = PlsModel::fit(&x, &y, &PlsConfig::new(l)).unwrap().coefficients().raw;
        let bp = PlsModel::fit(&xp, &y, &PlsConfig::new(l)).unwrap().coefficients().raw;
        for j in 0..4 {
            prop_assert!((bp.row(j) - b.row(perm[j])).amax() < 1e-8);
        }
    }

    #[test]
    fn pls_fitted_values_rotation_invariant(seed in 0u64..1000, l in 1usize..5) {
        let x = gaussian(seed, 40, 5);
        let y = &x * gaussian(seed + 10, 5, 2) + gaussian(seed + 11, 40, 2);
        let r = orthogonal(seed + 12, 5);
        let ys = standardize(&y);
        let a = centred(&x);
        let b = centred(&(&x * r));
        let fa = &a.values * fit_pls(&a, &ys, &PlsConfig::new(l)).unwrap().coefficients().standardized;
        let fb = &b.values * fit_pls(&b, &ys, &PlsConfig::new(l)).unwrap().coefficients().standardized;
        prop_assert!((fa - fb).amax() < 1e-8);
    }

    #[test]
    fn shrinkage_estimator_identity(seed in 0u64..1000, l in 1usize..5, lambda in 0.01f64..5.0) {
        let x = gaussian(seed, 50, 5);
        let y = (&x * gaussian(seed + 13, 5, 1)).column(0) + gaussian(seed + 14, 50, 1).column(0);
        let xs = standardize(&x);
        let basis = EigenBasis::new(&xs, &y).unwrap();
        for m in [Method::Ols, Method::Ridge { lambda }, Method::Pcr { components: l }, Method::Pls { components: l }] {
            let f = DVector::from_vec(scale_factors(&m, &xs, &y).unwrap().factors);
            let a = &xs.values * basis.coefficients_from_factors(&f);
            let b = &xs.values * method_coefficients(&m, &xs, &y).unwrap();
            prop_assert!((a - b).amax() < 1e-8);
        }
    }

    #[test]
    fn ridge_factors_decrease_inside_unit_interval(seed in 0u64..1000, lambda in 0.01f64..5.0) {
        let xs = standardize(&gaussian(seed, 50, 5));
        let y = gaussian(seed + 15, 50, 1).column(0).into_owned();
        let e = EigenBasis::new(&xs, &y).unwrap().spectrum.eigenvalues;
        let f = ridge_factors(&e, lambda);
        prop_assert!(f.iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(f.as_slice().windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn pcr_factors_step_and_full_pls_is_ols(seed in 0u64..1000, l in 0usize..6) {
        let xs = standardize(&gaussian(seed, 50, 5));
        let y = gaussian(seed + 16, 50, 1).column(0).into_owned();
        let pcr = scale_factors(&Method::Pcr { components: l }, &xs, &y).unwrap().factors;
        for (j, f) in pcr.iter().enumerate() {
            prop_assert_eq!(*f, if j < l { 1.0 } else { 0.0 });
        }
        let pls = scale_factors(&Method::Pls { components: 5 }, &xs, &y).unwrap();
        for (f, skip) in pls.factors.iter().zip(&pls.indeterminate) {
            if !skip {
                prop_assert!((f - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_index_rotation_equivariance(seed in 0u64..1000) {
        let x = gaussian(seed, 80, 4);
        let y = (&x * gaussian(seed + 17, 4, 1)).column(0).map(|v| v.tanh());
        let r = orthogonal(seed + 18, 4);
        let a = fit_single_index(&x, &y, Bandwidth::PlugIn).unwrap();
        let b = fit_single_index(&(&x * &r), &y, Bandwidth::PlugIn).unwrap();
        let rotated = r.transpose() * DVector::from_column_slice(&a.beta_hat);
        prop_assert!((rotated - DVector::from_column_slice(&b.beta_hat)).amax() < 1e-8);
        prop_assert!((a.predict(&x).unwrap() - b.predict(&(&x * &r)).unwrap()).amax() < 1e-8);
    }

    #[test]
    fn stein_constant_of_linear_link(a in -3.0f64..3.0, seed in 0u64..100) {
        let beta = DVector::from_column_slice(&[0.6, 0.8]);
        let est = stein_k(&beta, 0.2, |u| a * u, &GaussianInputs::standard(2), 10_000, seed).unwrap();
        prop_assert!((est.k - a).abs() <= 3.0 * est.standard_error + 1e-12);
    }

    #[test]
    fn identity_recursion_collapses_to_ols(seed in 0u64..1000, depth in 0usize..4) {
        let x = gaussian(seed, 60, 4);
        let y = &x * gaussian(seed + 19, 4, 2) + gaussian(seed + 20, 60, 2) * 0.3;
        let fit = fit_deep_recursive(&x, &y, &vec![2; depth], Activation::Identity).unwrap();
        let design = DMatrix::from_fn(60, 5, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let fitted = &design * ols(&design, &y).unwrap().coefficients;
        prop_assert!((fit.predict(&x).unwrap() - fitted).amax() < 1e-8);
    }

    #[test]
    fn tree_split_search_matches_brute_force(
        t in prop::collection::vec(-3.0f64..3.0, 4..=50),
        noise_seed in 0u64..1000,
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
        min_leaf in 2usize..6,
        coarse in any::<bool>(),
    ) {
        let mut t = t;
        if coarse {
            t.iter_mut().for_each(|v| *v = v.round());
        }
        t.sort_by(|x, y| y.total_cmp(x));
        let e = gaussian(noise_seed, t.len(), 1);
        let y: Vec<f64> = t.iter().zip(e.iter()).map(|(v, n)| v * v + n).collect();
        let cfg = TreeConfig { a, b, min_leaf, max_depth: 3 };
        let fast = best_split_sorted(&t, &y, &cfg);
        let slow = brute_force_split(&t, &y, &cfg);
        prop_assert_eq!(fast.map(|s| s.0), slow.map(|s| s.0));
    }

    #[test]
    fn predictive_variance_at_least_noise(seed in 0u64..1000, noise in 0.01f64..2.0) {
        let u = gaussian(seed, 12, 3);
        let y = gaussian(seed + 21, 12, 1).column(0).into_owned();
        let post = posterior(&u, &y, 0.4, noise).unwrap();
        let star = gaussian(seed + 22, 3, 1).column(0).into_owned();
        prop_assert!(post.predictive(&star).unwrap().variance >= noise);
    }

    #[test]
    fn correlation_circle_inside_unit_disk(seed in 0u64..1000) {
        let x = gaussian(seed, 40, 5);
        let y = &x * gaussian(seed + 23, 5, 3) + gaussian(seed + 24, 40, 3);
        let m = PlsModel::fit(&x, &y, &PlsConfig::new(2)).unwrap();
        let c = correlation_circle(&x, &y, &m, &[], &[]).unwrap();
        prop_assert!(c.max_radius_squared() <= 1.0 + 1e-8);
    }

    #[test]
    fn biplot_reproduces_rank_two_truncation(seed in 0u64..1000) {
        let xs = standardize(&gaussian(seed, 20, 5));
        let b = biplot(&xs, BiplotScaling::Form).unwrap();
        let trunc = svd(&xs.values).unwrap().truncated(2).unwrap();
        prop_assert!((b.reconstruction() - trunc).amax() < 1e-10);
    }
}

#[test]
fn predictive_variance_shrinks_with_nested_data() {
    let u = gaussian(31, 30, 2);
    let y = gaussian(32, 30, 1).column(0).into_owned();
    let star = DVector::from_column_slice(&[0.4, -0.9]);
    let mut last = f64::INFINITY;
    for n in [3, 6, 12, 20, 30] {
        let post = posterior(&u.rows(0, n).into_owned(), &y.rows(0, n).into_owned(), 0.5, 0.3).unwrap();
        let v = post.predictive(&star).unwrap().variance;
        assert!(v < last, "n = {n}");
        last = v;
    }
}

#[test]
fn posterior_mean_shrinks_ols_on_orthonormal_scores() {
    let u = gaussian(33, 20, 3).qr().q();
    let y = gaussian(34, 20, 1).column(0).into_owned();
    let ols_coef = u.transpose() * &y;
    let noise = 0.25;
    let mut previous = DVector::<f64>::zeros(3);
    for prior in [0.01, 0.1, 1.0, 10.0, 100.0] {
        let m = posterior(&u, &y, prior, noise).unwrap().mean;
        let expected = &ols_coef * (prior / (prior + noise));
        assert!((&m - &expected).amax() < 1e-12);
        for j in 0..3 {
            assert!(m[j].abs() >= previous[j].abs() && m[j].abs() <= ols_coef[j].abs());
        }
        previous = m;
    }
}

#[test]
fn gibbs_fixed_noise_matches_closed_form() {
    let u = gaussian(35, 25, 2);
    let y = (&u * DVector::from_column_slice(&[1.0, -0.5])) + gaussian(36, 25, 1).column(0) * 0.4;
    let post = posterior(&u, &y, 1.0, 0.16).unwrap();
    let s = gibbs_last_layer(&u, &y, 1.0, NoisePrior::Fixed { variance: 0.16 }, 10_000, 500, 4).unwrap();
    let se = s.coefficient_sd() / (s.coefficients.len() as f64).sqrt();
    let z = (s.coefficient_mean() - &post.mean).component_div(&se);
    assert!(z.amax() <= 3.0, "z = {z}");
}

#[test]
fn noiseless_linear_single_index_interpolates() {
    let x = gaussian(37, 60, 3);
    let y = (&x * DVector::from_column_slice(&[0.5, -1.0, 2.0])).add_scalar(0.3);
    let fit = fit_single_index(&x, &y, Bandwidth::PlugIn).unwrap();
    assert!((fit.predict(&x).unwrap() - y).amax() < 1e-8);
}

#[test]
fn fits_and_predictions_are_bit_reproducible() {
    let x = gaussian(38, 50, 4);
    let y = &x * gaussian(39, 4, 2) + gaussian(40, 50, 2) * 0.2;
    let pls = PlsModel::fit(&x, &y, &PlsConfig::new(2)).unwrap();
    let mlp = MlpConfig {
        epochs: 30,
        ..MlpConfig::default()
    };
    for spec in [
        InnerSpec::Linear,
        InnerSpec::Mlp(mlp.clone()),
        InnerSpec::Autoencoder { config: mlp, bottleneck: 1 },
        InnerSpec::Gp(GpConfig::default()),
        InnerSpec::Tree(InnerTreeConfig::default()),
    ] {
        let a = fit_inner(&pls, &spec).unwrap();
        let b = fit_inner(&pls, &spec).unwrap();
        assert_eq!(a, b);
        let pa = predict_pipeline(&pls, &a, &x).unwrap();
        let pb = predict_pipeline(&pls, &a, &x).unwrap();
        assert_eq!(pa, pb);
        if let dlpls::inner::InnerModel::Mlp { network } = &a {
            assert!(network.loss_trace.iter().all(|v| v.is_finite()));
        }
    }
    assert_eq!(pls, PlsModel::fit(&x, &y, &PlsConfig::new(2)).unwrap());
}

#[test]
fn generated_inputs_have_identity_covariance() {
    let data = generate(&SimSpec::relu_index(10_000, 5, 3)).unwrap();
    let means = column_means(&data.x);
    let xc = DMatrix::from_fn(10_000, 5, |i, j| data.x[(i, j)] - means[j]);
    let cov = xc.transpose() * xc / 9_999.0;
    assert!((cov - DMatrix::identity(5, 5)).norm() < 0.1);
}
