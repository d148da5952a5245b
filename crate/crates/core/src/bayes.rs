//! Conjugate Bayesian regression of an output on the Y-scores, with
//! `N(0, σ² I)` coefficient priors, closed-form predictive distributions
//! and a Gibbs sampler for the unknown-noise case.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::linalg::ols;

pub const DEFAULT_PRIOR_VARIANCE: f64 = 0.1;
const Z95: f64 = 1.644_853_626_951_472_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePosterior {
    #[serde(with = "io::vector")]
    pub mean: DVector<f64>,
    #[serde(with = "io::matrix")]
    pub covariance: DMatrix<f64>,
    pub noise_variance: f64,
    pub prior_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub variance: f64,
}

impl PredictiveDistribution {
    /// 5%, 50% and 95% Gaussian quantiles.
    pub fn quantiles(&self) -> [f64; 3] {
        let sd = self.variance.sqrt();
        [self.mean - Z95 * sd, self.mean, self.mean + Z95 * sd]
    }
}

fn check_inputs(u: &DMatrix<f64>, y: &DVector<f64>, prior_var: f64) -> Result<()> {
    if u.nrows() != y.len() {
        return Err(Error::dim(format!("u has {} rows but y has {}", u.nrows(), y.len())));
    }
    if u.ncols() == 0 {
        return Err(Error::invalid("no regressors"));
    }
    if !(prior_var > 0.0 && prior_var.is_finite()) {
        return Err(Error::invalid(format!("prior variance must be positive, got {prior_var}")));
    }
    if u.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite values in u or y"));
    }
    Ok(())
}

fn conditional(u: &DMatrix<f64>, y: &DVector<f64>, prior_var: f64, noise_var: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let l = u.ncols();
    let mut precision = u.transpose() * u / noise_var;
    for i in 0..l {
        precision[(i, i)] += 1.0 / prior_var;
    }
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::numerical("posterior precision is not positive definite"))?;
    let covariance = chol.inverse();
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    let mean = chol.solve(&(u.transpose() * y / noise_var));
    Ok((mean, covariance))
}

/// `S = (UᵀU/σ²_ε + I/σ²)⁻¹`, `m = S Uᵀy / σ²_ε`.
pub fn posterior(u: &DMatrix<f64>, y: &DVector<f64>, prior_var: f64, noise_var: f64) -> Result<ConjugatePosterior> {
    check_inputs(u, y, prior_var)?;
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::invalid(format!("noise variance must be positive, got {noise_var}")));
    }
    let (mean, covariance) = conditional(u, y, prior_var, noise_var)?;
    Ok(ConjugatePosterior {
        mean,
        covariance,
        noise_variance: noise_var,
        prior_variance: prior_var,
    })
}

impl ConjugatePosterior {
    /// Mean `u*ᵀm`, variance `u*ᵀS u* + σ²_ε`.
    pub fn predictive(&self, u_star: &DVector<f64>) -> Result<PredictiveDistribution> {
        if u_star.len() != self.mean.len() {
            return Err(Error::dim(format!(
                "expected {} scores, found {}",
                self.mean.len(),
                u_star.len()
            )));
        }
        Ok(PredictiveDistribution {
            mean: u_star.dot(&self.mean),
            variance: (u_star.transpose() * &self.covariance * u_star)[(0, 0)] + self.noise_variance,
        })
    }
}

pub fn posterior_predictive(post: &ConjugatePosterior, u_star: &DVector<f64>) -> Result<PredictiveDistribution> {
    post.predictive(u_star)
}

/// Residual variance `RSS / (n − L)` of the OLS fit of `y` on `u`, the
/// default noise level.
pub fn residual_noise_variance(u: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let (n, l) = u.shape();
    if n <= l {
        return Err(Error::invalid(format!("need more than {l} rows to estimate the noise")));
    }
    let ymat = DMatrix::from_column_slice(n, 1, y.as_slice());
    let fit = ols(u, &ymat)?;
    let rss = (ymat - u * fit.coefficients).norm_squared();
    let var = rss / (n - l) as f64;
    if !(var > 0.0) {
        return Err(Error::numerical("residual variance is zero"));
    }
    Ok(var)
}

/// One posterior per output column.
pub fn fit_last_layer(u: &DMatrix<f64>, y: &DMatrix<f64>, prior_var: f64, noise_var: Option<f64>) -> Result<Vec<ConjugatePosterior>> {
    (0..y.ncols())
        .map(|k| {
            let yk = y.column(k).into_owned();
            let noise = match noise_var {
                Some(v) => v,
                None => residual_noise_variance(u, &yk)?,
            };
            posterior(u, &yk, prior_var, noise)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoisePrior {
    Fixed { variance: f64 },
    InverseGamma { shape: f64, scale: f64 },
}

impl Default for NoisePrior {
    fn default() -> Self {
        NoisePrior::InverseGamma {
            shape: 0.01,
            scale: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsSamples {
    /// Post-burn-in coefficient draws.
    pub coefficients: Vec<DVector<f64>>,
    pub noise_variances: Vec<f64>,
}

impl GibbsSamples {
    pub fn coefficient_mean(&self) -> DVector<f64> {
        let n = self.coefficients.len() as f64;
        self.coefficients.iter().fold(DVector::zeros(self.coefficients[0].len()), |acc, c| acc + c) / n
    }

    pub fn coefficient_sd(&self) -> DVector<f64> {
        let mean = self.coefficient_mean();
        let n = self.coefficients.len() as f64;
        let ss = self
            .coefficients
            .iter()
            .fold(DVector::zeros(mean.len()), |acc: DVector<f64>, c| acc + (c - &mean).map(|v| v * v));
        (ss / (n - 1.0)).map(f64::sqrt)
    }

    /// Predictive draws `u*ᵀβ + ε` summarized by their mean and variance.
    pub fn predictive(&self, u_star: &DVector<f64>) -> PredictiveDistribution {
        let n = self.coefficients.len() as f64;
        let means: Vec<f64> = self.coefficients.iter().map(|c| u_star.dot(c)).collect();
        let mean = means.iter().sum::<f64>() / n;
        let spread = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let noise = self.noise_variances.iter().sum::<f64>() / n;
        PredictiveDistribution {
            mean,
            variance: spread + noise,
        }
    }
}

/// Alternates `β | σ²_ε ~ N(m, S)` and `σ²_ε | β ~ IG(a₀ + n/2, b₀ + RSS/2)`.
pub fn gibbs_last_layer(
    u: &DMatrix<f64>,
    y: &DVector<f64>,
    prior_var: f64,
    noise_prior: NoisePrior,
    iters: usize,
    burn_in: usize,
    seed: u64,
) -> Result<GibbsSamples> {
    check_inputs(u, y, prior_var)?;
    if iters <= burn_in {
        return Err(Error::invalid(format!("iterations ({iters}) must exceed burn-in ({burn_in})")));
    }
    let n = y.len() as f64;
    let mut noise = match noise_prior {
        NoisePrior::Fixed { variance } => {
            if !(variance > 0.0 && variance.is_finite()) {
                return Err(Error::invalid("fixed noise variance must be positive"));
            }
            variance
        }
        NoisePrior::InverseGamma { shape, scale } => {
            if !(shape > 0.0 && scale > 0.0) {
                return Err(Error::invalid("inverse-gamma shape and scale must be positive"));
            }
            let v = y.variance();
            if v > 0.0 { v } else { 1.0 }
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = u.ncols();
    let mut samples = GibbsSamples {
        coefficients: Vec::with_capacity(iters - burn_in),
        noise_variances: Vec::with_capacity(iters - burn_in),
    };
    let mut fixed_factor = None;
    for it in 0..iters {
        let (mean, lower) = match (&noise_prior, &fixed_factor) {
            (NoisePrior::Fixed { .. }, Some(f)) => Clone::clone(f),
            _ => {
                let (m, s) = conditional(u, y, prior_var, noise)?;
                let lower = s
                    .cholesky()
                    .ok_or_else(|| Error::numerical("posterior covariance is not positive definite"))?
                    .l();
                if matches!(noise_prior, NoisePrior::Fixed { .. }) {
                    fixed_factor = Some((m.clone(), lower.clone()));
                }
                (m, lower)
            }
        };
        let z = DVector::from_fn(l, |_, _| StandardNormal.sample(&mut rng));
        let beta = mean + lower * z;
        if let NoisePrior::InverseGamma { shape, scale } = noise_prior {
            let rss = (y - u * &beta).norm_squared();
            let rate = scale + 0.5 * rss;
            let gamma = Gamma::new(shape + 0.5 * n, 1.0 / rate)
                .map_err(|e| Error::numerical(format!("noise draw: {e}")))?;
            let precision: f64 = gamma.sample(&mut rng);
            noise = 1.0 / precision;
        }
        if it >= burn_in {
            samples.coefficients.push(beta);
            samples.noise_variances.push(noise);
        }
    }
    Ok(samples)
}

/// CSV row of a predictive summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRow {
    pub output: usize,
    pub mean: f64,
    pub variance: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

impl PredictiveRow {
    pub fn new(output: usize, dist: &PredictiveDistribution) -> Self {
        let [q05, q50, q95] = dist.quantiles();
        PredictiveRow {
            output,
            mean: dist.mean,
            variance: dist.variance,
            q05,
            q50,
            q95,
        }
    }
}

/// CSV row of one Gibbs draw, long format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRow {
    pub draw: usize,
    pub coefficient: usize,
    pub value: f64,
}

pub fn draw_rows(samples: &GibbsSamples) -> Vec<DrawRow> {
    samples
        .coefficients
        .iter()
        .enumerate()
        .flat_map(|(d, c)| {
            c.iter().enumerate().map(move |(j, &v)| DrawRow {
                draw: d,
                coefficient: j,
                value: v,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gaussian(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn prior_limits() {
        let u = gaussian(30, 2, 1);
        let y = gaussian(30, 1, 2).column(0).into_owned() + u.column(0);
        let tight = posterior(&u, &y, 1e-12, 0.5).unwrap();
        assert!(tight.mean.amax() < 1e-9);
        let flat = posterior(&u, &y, 1e8, 0.5).unwrap();
        let ols_b = ols(&u, &DMatrix::from_column_slice(30, 1, y.as_slice())).unwrap().coefficients;
        assert!((flat.mean - ols_b.column(0)).amax() < 1e-6);
    }

    #[test]
    fn orthonormal_shrinkage_closed_form() {
        let u = gaussian(20, 3, 3).qr().q();
        let y = gaussian(20, 1, 4).column(0).into_owned();
        let ols_b = u.transpose() * &y;
        let mut last: DVector<f64> = DVector::zeros(3);
        for &s2 in &[0.01, 0.1, 1.0, 10.0] {
            let p = posterior(&u, &y, s2, 0.3).unwrap();
            let expected = &ols_b * (s2 / (s2 + 0.3));
            assert!((&p.mean - expected).amax() < 1e-12);
            for j in 0..3 {
                assert!(p.mean[j].abs() >= last[j].abs() - 1e-15);
            }
            last = p.mean;
        }
    }

    #[test]
    fn five_row_fixture_against_hand_solve() {
        let u = DMatrix::from_row_slice(5, 2, &[1.0, 0.5, -0.3, 1.2, 0.8, -0.7, 0.1, 0.4, -1.1, 0.9]);
        let y = DVector::from_column_slice(&[1.5, 0.7, 0.2, 0.6, -0.4]);
        let (s2, se2) = (0.1, 0.25);
        let post = posterior(&u, &y, s2, se2).unwrap();
        // 2×2 precision inverted by hand
        let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
        let (mut r0, mut r1) = (0.0, 0.0);
        for i in 0..5 {
            a += u[(i, 0)] * u[(i, 0)];
            b += u[(i, 0)] * u[(i, 1)];
            d += u[(i, 1)] * u[(i, 1)];
            r0 += u[(i, 0)] * y[i];
            r1 += u[(i, 1)] * y[i];
        }
        let (pa, pb, pd) = (a / se2 + 1.0 / s2, b / se2, d / se2 + 1.0 / s2);
        let det = pa * pd - pb * pb;
        let (sa, sb, sd) = (pd / det, -pb / det, pa / det);
        let m0 = (sa * r0 + sb * r1) / se2;
        let m1 = (sb * r0 + sd * r1) / se2;
        assert_abs_diff_eq!(post.mean[0], m0, epsilon = 1e-12);
        assert_abs_diff_eq!(post.mean[1], m1, epsilon = 1e-12);
        let u6 = DVector::from_column_slice(&[0.3, -0.6]);
        let pred = post.predictive(&u6).unwrap();
        let var = sa * 0.09 + 2.0 * sb * 0.3 * -0.6 + sd * 0.36 + se2;
        assert_abs_diff_eq!(pred.mean, 0.3 * m0 - 0.6 * m1, epsilon = 1e-10);
        assert_abs_diff_eq!(pred.variance, var, epsilon = 1e-10);
    }

    #[test]
    fn predictive_trivia() {
        let u = gaussian(15, 3, 5);
        let y = gaussian(15, 1, 6).column(0).into_owned();
        let post = posterior(&u, &y, 0.1, 0.2).unwrap();
        let zero = post.predictive(&DVector::zeros(3)).unwrap();
        assert_eq!(zero.mean, 0.0);
        assert_abs_diff_eq!(zero.variance, 0.2, epsilon = 1e-15);
        let e1 = post.predictive(&DVector::from_column_slice(&[1.0, 0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(e1.mean, post.mean[0], epsilon = 1e-15);
        assert_abs_diff_eq!(e1.variance, post.covariance[(0, 0)] + 0.2, epsilon = 1e-15);
    }

    #[test]
    fn predictive_variance_shrinks_with_more_data() {
        let u = gaussian(40, 2, 7);
        let y = gaussian(40, 1, 8).column(0).into_owned();
        let u_star = DVector::from_column_slice(&[0.5, 1.0]);
        let mut last = f64::INFINITY;
        for n in [5, 10, 20, 40] {
            let post = posterior(&u.rows(0, n).into_owned(), &y.rows(0, n).into_owned(), 0.1, 0.3).unwrap();
            let v = post.predictive(&u_star).unwrap().variance;
            assert!(v < last && v >= 0.3);
            last = v;
        }
    }

    #[test]
    fn gibbs_fixed_noise_matches_closed_form() {
        let u = gaussian(25, 2, 9);
        let y = gaussian(25, 1, 10).column(0) + u.column(1) * 0.5;
        let post = posterior(&u, &y, 0.1, 0.4).unwrap();
        let samples = gibbs_last_layer(&u, &y, 0.1, NoisePrior::Fixed { variance: 0.4 }, 20_500, 500, 11).unwrap();
        assert_eq!(samples.coefficients.len(), 20_000);
        let mean = samples.coefficient_mean();
        let sd = samples.coefficient_sd();
        for j in 0..2 {
            let se = sd[j] / (20_000f64).sqrt();
            assert!((mean[j] - post.mean[j]).abs() < 3.0 * se, "coefficient {j}");
        }
    }

    #[test]
    fn gibbs_determinism_and_concentration() {
        let u = gaussian(20, 2, 12);
        let y = gaussian(20, 1, 13).column(0).into_owned();
        let a = gibbs_last_layer(&u, &y, 0.1, NoisePrior::default(), 300, 100, 5).unwrap();
        let b = gibbs_last_layer(&u, &y, 0.1, NoisePrior::default(), 300, 100, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.noise_variances.iter().all(|v| v.is_finite() && *v > 0.0));
        let tight = gibbs_last_layer(&u, &y, 1e-8, NoisePrior::default(), 500, 100, 6).unwrap();
        assert!(tight.coefficient_sd().amax() < 1e-3);
        assert!(gibbs_last_layer(&u, &y, 0.1, NoisePrior::default(), 10, 10, 0).is_err());
    }

    #[test]
    fn csv_rows_round_trip() {
        let dist = PredictiveDistribution { mean: 1.0, variance: 4.0 };
        let rows = vec![PredictiveRow::new(0, &dist)];
        assert_abs_diff_eq!(rows[0].q95 - rows[0].q50, 2.0 * Z95, epsilon = 1e-12);
        let csv = io::to_csv_string(&rows).unwrap();
        let back: Vec<PredictiveRow> = io::from_csv_str(&csv).unwrap();
        assert_eq!(back, rows);
    }
}
