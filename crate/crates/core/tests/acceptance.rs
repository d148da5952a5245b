//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any fails. The wine criterion needs the UCI white-wine file;
//! point `DLPLS_WINE_DATA` at it, otherwise the criterion is reported as
//! skipped.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dlpls::bayes::{gibbs_last_layer, posterior, NoisePrior};
use dlpls::brillinger::{stein_k, GaussianInputs};
use dlpls::dataset::standardize;
use dlpls::diagnostics::{correlation_circle, scale_factor_curves_raw};
use dlpls::experiments::{
    all_passed, deep_recovery, independent_sim, index_recovery, wine, Check, DeepRecoveryConfig, IndependentSimConfig,
    IndexRecoveryConfig, WineConfig,
};
use dlpls::inner::gp::{fit_gp, GpConfig, GpMean};
use dlpls::inner::tree::{best_split_sorted, brute_force_split, TreeConfig};
use dlpls::pls::{fit_pls, helland_beta, ols_reference, PlsConfig, PlsModel};
use dlpls::shrinkage::{
    dropout_mc_objective, dropout_objective, dropout_ridge, method_coefficients, ridge_factors, scale_factors,
    EigenBasis, Method,
};
use dlpls::simulation::{collinear_design, generate, SimSpec, COLLINEAR_SEED};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(rng))
}

fn summarize(checks: &[Check]) -> String {
    checks
        .iter()
        .map(|c| format!("{} = {:.4} ({}{})", c.name, c.observed, c.bound, if c.passed { "" } else { ", FAILED" }))
        .collect::<Vec<_>>()
        .join("; ")
}

fn pls_equals_ols() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let p = 3 + inst % 6;
        let q = if inst % 2 == 0 { 1 } else { 3 };
        let x = gaussian(&mut rng, 100, p);
        let y = &x * gaussian(&mut rng, p, q) + gaussian(&mut rng, 100, q);
        let pls = PlsModel::fit(&x, &y, &PlsConfig::new(p)).expect("pls fit").coefficients();
        let ols = ols_reference(&x, &y).expect("ols fit");
        worst = worst.max((&pls.raw - &ols.raw).amax()).max((&pls.intercept - &ols.intercept).amax());
    }
    verdict(worst <= 1e-6, format!("20 instances, max |beta_pls - beta_ols| = {worst:.2e} (tol 1e-6)"))
}

fn helland_equals_nipals() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for p in [3, 5, 8] {
        let x = gaussian(&mut rng, 120, p);
        let b = gaussian(&mut rng, p, 1);
        let y = &x * b + gaussian(&mut rng, 120, 1);
        let xs = standardize(&x);
        let ys = standardize(&y);
        let yv = ys.values.column(0).into_owned();
        for k in 1..=p {
            let h = helland_beta(&xs, &yv, k).expect("helland");
            let m = fit_pls(&xs, &ys, &PlsConfig::new(k)).expect("nipals");
            worst = worst.max((&h.beta - m.coefficients().standardized.column(0)).amax());
            cases += 1;
        }
    }
    verdict(worst <= 1e-6, format!("{cases} (p, K) cases, max coefficient gap = {worst:.2e} (tol 1e-6)"))
}

fn independent_predictors() -> Outcome {
    let cfg = IndependentSimConfig {
        mlp: None,
        ..IndependentSimConfig::default()
    };
    let report = independent_sim(&cfg).expect("independent simulation");
    verdict(all_passed(&report.checks), summarize(&report.checks))
}

fn single_index_recovery() -> Outcome {
    let report = index_recovery(&IndexRecoveryConfig::default()).expect("index recovery");
    let ks: Vec<String> = report.runs.iter().map(|r| format!("k_{} = {:.4}", r.activation, r.stein.k)).collect();
    verdict(
        all_passed(&report.checks),
        format!("{}; {}", summarize(&report.checks), ks.join(", ")),
    )
}

fn stein_constants() -> Outcome {
    let beta = DVector::from_element(1, 1.0);
    let inputs = GaussianInputs::standard(1);
    let draws = 1_000_000;
    let cases: [(&str, fn(f64) -> f64, f64); 3] = [
        ("identity", |u| u, 1.0),
        ("2u", |u| 2.0 * u, 2.0),
        ("relu", |u| u.max(0.0), 0.5),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (name, g, target)) in cases.iter().enumerate() {
        let est = stein_k(&beta, 0.0, g, &inputs, draws, 10 + i as u64).expect("stein");
        // linear links have zero Monte Carlo error: compare to rounding level
        let slack = (3.0 * est.standard_error).max(1e-12);
        let pass = (est.k - target).abs() <= slack;
        ok &= pass;
        parts.push(format!("{name}: k = {:.5} (se {:.1e})", est.k, est.standard_error));
    }
    verdict(ok, parts.join(", "))
}

fn recursive_ols() -> Outcome {
    let report = deep_recovery(&DeepRecoveryConfig::default()).expect("deep recovery");
    verdict(
        all_passed(&report.checks),
        format!("{}; per-seed max angles {:?}", summarize(&report.checks), report.max_angles.iter().map(|a| (a * 100.0).round() / 100.0).collect::<Vec<_>>()),
    )
}

fn shrinkage_factors() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (cx, cy) = collinear_design(COLLINEAR_SEED);
    let generic = {
        let x = gaussian(&mut rng, 80, 5);
        let y = (&x * gaussian(&mut rng, 5, 1)).column(0) + gaussian(&mut rng, 80, 1).column(0);
        (x, y)
    };
    let mut identity_gap = 0.0f64;
    let mut ridge_gap = 0.0f64;
    let mut pcr_binary = true;
    for (x, y) in [(&cx, &cy), (&generic.0, &generic.1)] {
        let xs = standardize(x);
        let basis = EigenBasis::new(&xs, y).expect("basis");
        let p = x.ncols();
        let mut methods = vec![Method::Ols, Method::Ridge { lambda: 0.3 }, Method::Ridge { lambda: 4.0 }];
        for l in 1..=p {
            methods.push(Method::Pcr { components: l });
            methods.push(Method::Pls { components: l });
        }
        for m in &methods {
            let sf = scale_factors(m, &xs, y).expect("factors");
            let f = DVector::from_column_slice(&sf.factors);
            let from_factors = &xs.values * basis.coefficients_from_factors(&f);
            let direct = &xs.values * method_coefficients(m, &xs, y).expect("coefficients");
            identity_gap = identity_gap.max((from_factors - direct).amax());
            match m {
                Method::Pcr { .. } => pcr_binary &= sf.factors.iter().all(|&v| v == 0.0 || v == 1.0),
                Method::Ridge { lambda } => {
                    let closed = ridge_factors(basis.eigenvalues(), *lambda);
                    ridge_gap = ridge_gap.max((closed - &f).amax());
                }
                _ => {}
            }
        }
    }
    let ycol = DMatrix::from_column_slice(cy.len(), 1, cy.as_slice());
    let rows = scale_factor_curves_raw(&cx, &ycol, &[1, 2, 3], &[], &[]).expect("curves");
    let max_pls = rows.iter().filter(|r| r.method == "pls").map(|r| r.factor).fold(f64::MIN, f64::max);
    verdict(
        identity_gap <= 1e-8 && ridge_gap <= 1e-10 && pcr_binary && max_pls > 1.0,
        format!(
            "fitted-value identity gap {identity_gap:.2e} (tol 1e-8), ridge closed-form gap {ridge_gap:.2e} (tol 1e-10), PCR factors binary: {pcr_binary}, max f_pls on collinear fixture = {max_pls:.4}"
        ),
    )
}

fn dropout_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = gaussian(&mut rng, 40, 4);
    let y = &x * gaussian(&mut rng, 4, 2) + gaussian(&mut rng, 40, 2) * 0.5;
    let keep = 0.8;
    let w = dropout_ridge(&x, &y, keep).expect("closed form");
    let closed = dropout_objective(&x, &y, &w, keep).expect("objective");
    let (mc, se) = dropout_mc_objective(&x, &y, &w, keep, 100_000, 9).expect("monte carlo");
    verdict(
        (mc - closed).abs() <= 3.0 * se,
        format!("closed form {closed:.5}, Monte Carlo {mc:.5} (se {se:.5}), gap = {:.2} se", (mc - closed).abs() / se),
    )
}

fn gp_interpolation() -> Outcome {
    let t = DVector::from_fn(15, |i, _| -3.5 + 0.5 * i as f64);
    let u = t.map(|v| (1.3 * v).sin() + 0.2 * v);
    let cfg = GpConfig {
        lengthscale: 0.8,
        signal_variance: 1.5,
        noise_variance: 0.0,
        mean: GpMean::Constant(0.7),
    };
    let gp = fit_gp(&t, &u, &cfg).expect("gp");
    let interp = (gp.predict(&t).mean - &u).amax();
    let far = gp.predict(&DVector::from_column_slice(&[60.0, -80.0]));
    let mean_gap = far.mean.map(|m| (m - 0.7).abs()).max();
    let var_gap = far.variance.map(|v| (v - 1.5).abs()).max();
    verdict(
        interp <= 1e-6 && mean_gap <= 1e-3 && var_gap <= 1e-3,
        format!("training residual {interp:.2e} (tol 1e-6), far-field mean gap {mean_gap:.2e}, variance gap {var_gap:.2e} (tol 1e-3)"),
    )
}

fn bayes_last_layer() -> Outcome {
    let u = DMatrix::from_row_slice(5, 2, &[1.0, 0.5, -0.3, 1.2, 0.8, -0.7, 1.5, 0.1, -1.1, -0.4]);
    let y = DVector::from_column_slice(&[1.1, 0.4, 0.2, 1.9, -1.3]);
    let (tau, sigma2) = (0.5, 0.2);
    let post = posterior(&u, &y, tau, sigma2).expect("posterior");
    let star = DVector::from_column_slice(&[0.3, -1.2]);
    let pred = post.predictive(&star).expect("predictive");

    // 2x2 hand solve
    let (mut a, mut b, mut d, mut r0, mut r1) = (1.0 / tau, 0.0, 1.0 / tau, 0.0, 0.0);
    for i in 0..5 {
        let (p, q) = (u[(i, 0)], u[(i, 1)]);
        a += p * p / sigma2;
        b += p * q / sigma2;
        d += q * q / sigma2;
        r0 += p * y[i] / sigma2;
        r1 += q * y[i] / sigma2;
    }
    let det = a * d - b * b;
    let (s00, s01, s11) = (d / det, -b / det, a / det);
    let (m0, m1) = (s00 * r0 + s01 * r1, s01 * r0 + s11 * r1);
    let hand_mean = star[0] * m0 + star[1] * m1;
    let hand_var = star[0] * star[0] * s00 + 2.0 * star[0] * star[1] * s01 + star[1] * star[1] * s11 + sigma2;
    let hand_gap = (pred.mean - hand_mean).abs().max((pred.variance - hand_var).abs());

    let samples = gibbs_last_layer(&u, &y, tau, NoisePrior::Fixed { variance: sigma2 }, 20_000, 1_000, 3).expect("gibbs");
    let draws = samples.coefficients.len() as f64;
    let mc_se = samples.coefficient_sd() / draws.sqrt();
    let z = (samples.coefficient_mean() - &post.mean).component_div(&mc_se).amax();
    verdict(
        hand_gap <= 1e-10 && z <= 3.0,
        format!("predictive vs hand solve gap {hand_gap:.2e} (tol 1e-10), Gibbs mean max |z| = {z:.2} (tol 3)"),
    )
}

fn tree_splits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    let mut compared = 0;
    for node in 0..50 {
        let n = rng.random_range(6..=50);
        let mut t: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        if node % 3 == 0 {
            // coarse values create ties, which restrict admissible splits
            t.iter_mut().for_each(|v| *v = (*v * 2.0).round() / 2.0);
        }
        t.sort_by(|a, b| b.total_cmp(a));
        let y: Vec<f64> = t
            .iter()
            .map(|v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + 0.5 * e
            })
            .collect();
        let cfg = TreeConfig {
            a: rng.random_range(0.0..=1.0),
            b: rng.random_range(0.0..=0.5),
            min_leaf: rng.random_range(2..=5),
            max_depth: 4,
        };
        let fast = best_split_sorted(&t, &y, &cfg).map(|(s, _)| s);
        let slow = brute_force_split(&t, &y, &cfg).map(|(s, _)| s);
        compared += 1;
        if fast != slow {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{compared} random nodes, {mismatches} argmin mismatches"))
}

fn wine_reproduction() -> Outcome {
    let Some(path) = std::env::var_os("DLPLS_WINE_DATA").map(PathBuf::from) else {
        return Outcome::Skipped("set DLPLS_WINE_DATA to the UCI winequality-white.csv file".into());
    };
    match wine(&path, &WineConfig::default()) {
        Ok(report) => verdict(all_passed(&report.checks), summarize(&report.checks)),
        Err(e) => Outcome::Fail(format!("could not run: {e}")),
    }
}

fn substituted_properties() -> Outcome {
    // correlation circle on simulated two-output data stays in the unit disk
    let data = generate(&SimSpec::two_output(400, 5)).expect("simulation");
    let pls = PlsModel::fit(&data.x, &data.y, &PlsConfig::new(2)).expect("pls");
    let circle = correlation_circle(&data.x, &data.y, &pls, &[], &[]).expect("circle");
    let radius = circle.max_radius_squared();
    let (cx, cy) = collinear_design(COLLINEAR_SEED);
    let ycol = DMatrix::from_column_slice(cy.len(), 1, cy.as_slice());
    let rows = scale_factor_curves_raw(&cx, &ycol, &[1, 2], &[0.5], &[]).expect("curves");
    let binary = rows.iter().filter(|r| r.method == "pcr").all(|r| r.factor == 0.0 || r.factor == 1.0);
    let expands = rows.iter().any(|r| r.method == "pls" && r.factor > 1.0);
    verdict(
        radius <= 1.0 + 1e-8 && binary && expands,
        format!(
            "max r1^2 + r2^2 = {radius:.6}, PCR factors binary: {binary}, PLS expansion present: {expands}; exact figure coordinates and network accuracies are not compared"
        ),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome, u64);
    let criteria: [Criterion; 13] = [
        ("PLS equals OLS at full rank", pls_equals_ols, 5),
        ("Krylov closed form equals NIPALS", helland_equals_nipals, 5),
        ("independent-predictor simulation", independent_predictors, 10),
        ("single-index recovery", single_index_recovery, 30),
        ("Stein constants", stein_constants, 10),
        ("recursive OLS on deep ReLU truth", recursive_ols, 60),
        ("shrinkage scale factors", shrinkage_factors, 5),
        ("dropout equals ridge", dropout_equivalence, 30),
        ("GP interpolation and prior reversion", gp_interpolation, 5),
        ("Bayesian last layer", bayes_last_layer, 30),
        ("PLS-tree split search", tree_splits, 5),
        ("wine reproduction", wine_reproduction, 60),
        ("property substitutes for unavailable results", substituted_properties, 5),
    ];
    let (mut failed, mut skipped) = (0, 0);
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let slow = elapsed > Duration::from_secs(*limit);
        let (tag, detail) = match outcome {
            Outcome::Pass(d) if !slow => ("PASS", d),
            Outcome::Pass(d) => ("FAIL", format!("{d}; runtime over {limit} s")),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skipped(d) => ("SKIPPED", d),
        };
        match tag {
            "FAIL" => failed += 1,
            "SKIPPED" => skipped += 1,
            _ => {}
        }
        println!(
            "criterion {:>2} {:<7} {name} [{:.2} s / {limit} s]: {detail}",
            i + 1,
            tag,
            elapsed.as_secs_f64()
        );
    }
    println!(
        "acceptance: {} criteria, {} passed, {failed} failed, {skipped} skipped",
        criteria.len(),
        criteria.len() - failed - skipped
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
