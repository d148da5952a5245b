//! Single-index models fitted by OLS up to proportionality, with a kernel
//! estimate of the link, and deep ReLU networks estimated stage by stage
//! with recursive OLS.
//!
//! For Gaussian inputs and `y = g(α + βᵀx) + ε`, the OLS slope vector is
//! `kβ` with `k = cov(g(s), s) / var(s)`; the constant is absorbed into
//! the nonparametric link.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::select_columns;
use crate::error::{Error, Result};
use crate::linalg::{ols_with_intercept, principal_angles};

const GRID_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", content = "value", rename_all = "kebab-case")]
pub enum Bandwidth {
    /// `1.06 · sd(index) · n^{-1/5}`.
    #[default]
    PlugIn,
    Fixed(f64),
}

/// Local-linear Gaussian-kernel smoother of `y` against a scalar index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalLinear {
    pub index: Vec<f64>,
    pub response: Vec<f64>,
    pub bandwidth: f64,
}

impl LocalLinear {
    pub fn fit(index: &[f64], response: &[f64], bandwidth: Bandwidth) -> Result<Self> {
        if index.len() != response.len() {
            return Err(Error::dim(format!(
                "{} index values for {} responses",
                index.len(),
                response.len()
            )));
        }
        let n = index.len();
        if n < 2 {
            return Err(Error::invalid("smoothing needs at least two points"));
        }
        let mean = index.iter().sum::<f64>() / n as f64;
        let sd = (index.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let range = index.iter().cloned().fold(f64::MIN, f64::max) - index.iter().cloned().fold(f64::MAX, f64::min);
        if !(range > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::invalid("index is constant; cannot estimate a link"));
        }
        let h = match bandwidth {
            Bandwidth::PlugIn => 1.06 * sd * (n as f64).powf(-0.2),
            Bandwidth::Fixed(h) => h,
        };
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
        }
        Ok(LocalLinear {
            index: index.to_vec(),
            response: response.to_vec(),
            bandwidth: h,
        })
    }

    pub fn eval(&self, u0: f64) -> f64 {
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let inv_h = 1.0 / self.bandwidth;
        for (&u, &y) in self.index.iter().zip(&self.response) {
            let d = u - u0;
            let z = d * inv_h;
            let w = (-0.5 * z * z).exp();
            s0 += w;
            s1 += w * d;
            s2 += w * d * d;
            t0 += w * y;
            t1 += w * d * y;
        }
        let det = s0 * s2 - s1 * s1;
        if det > 1e-12 * s0 * s2 && s0 > 0.0 {
            (s2 * t0 - s1 * t1) / det
        } else if s0 > 1e-300 {
            t0 / s0
        } else {
            // far outside the data: nearest observation
            let mut best = 0;
            for (i, &u) in self.index.iter().enumerate() {
                if (u - u0).abs() < (self.index[best] - u0).abs() {
                    best = i;
                }
            }
            self.response[best]
        }
    }

    pub fn eval_many(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|&v| self.eval(v)).collect()
    }
}

/// Estimated link on an evenly spaced grid over the observed index range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleIndexFit {
    /// OLS slopes; the index is `u = beta_hatᵀx`.
    pub beta_hat: Vec<f64>,
    pub intercept: f64,
    pub smoother: LocalLinear,
    pub link: LinkCurve,
    pub n_used: usize,
}

pub fn fit_single_index(x: &DMatrix<f64>, y: &DVector<f64>, bandwidth: Bandwidth) -> Result<SingleIndexFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::dim(format!("x has {n} rows but y has {}", y.len())));
    }
    if n <= p {
        return Err(Error::invalid(format!("need more rows than inputs (n = {n}, p = {p})")));
    }
    let (intercept, fit) = ols_with_intercept(x, &DMatrix::from_column_slice(n, 1, y.as_slice()))?;
    let beta = fit.coefficients.column(0).into_owned();
    let index = x * &beta;
    let smoother = LocalLinear::fit(index.as_slice(), y.as_slice(), bandwidth)?;
    let lo = index.min();
    let hi = index.max();
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let values = smoother.eval_many(&grid);
    Ok(SingleIndexFit {
        beta_hat: beta.as_slice().to_vec(),
        intercept: intercept[0],
        smoother,
        link: LinkCurve { grid, values },
        n_used: n,
    })
}

impl SingleIndexFit {
    pub fn index(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.beta_hat.len() {
            return Err(Error::dim(format!(
                "expected {} input columns, found {}",
                self.beta_hat.len(),
                x.ncols()
            )));
        }
        Ok(x * DVector::from_column_slice(&self.beta_hat))
    }

    /// `ĝ(β̂ᵀx)`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let u = self.index(x)?;
        Ok(DVector::from_vec(self.smoother.eval_many(u.as_slice())))
    }

    /// Scatter of training `(index, response)` pairs.
    pub fn scatter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.smoother.index.iter().copied().zip(self.smoother.response.iter().copied())
    }
}

/// Monte Carlo estimate of the proportionality constant with its standard
/// error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinEstimate {
    pub k: f64,
    pub standard_error: f64,
    pub draws: usize,
}

/// Gaussian input distribution for [`stein_k`].
#[derive(Debug, Clone)]
pub struct GaussianInputs {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianInputs {
    pub fn standard(p: usize) -> Self {
        GaussianInputs {
            mean: DVector::zeros(p),
            covariance: DMatrix::identity(p, p),
        }
    }
}

pub const STEIN_DEFAULT_DRAWS: usize = 1_000_000;

/// `k = cov(g(s), s) / var(s)` for `s = α + βᵀx`, `x ~ N(μ, Σ)`. The
/// standard error is the heteroskedasticity-robust (HC0) error of the slope
/// of `g(s)` on `s`.
pub fn stein_k<G: Fn(f64) -> f64>(
    beta: &DVector<f64>,
    alpha: f64,
    g: G,
    inputs: &GaussianInputs,
    draws: usize,
    seed: u64,
) -> Result<SteinEstimate> {
    let p = beta.len();
    if inputs.mean.len() != p || inputs.covariance.shape() != (p, p) {
        return Err(Error::dim(format!("input distribution does not have dimension {p}")));
    }
    if draws < 3 {
        return Err(Error::invalid("need at least three draws"));
    }
    let centre = alpha + beta.dot(&inputs.mean);
    let var = (beta.transpose() * &inputs.covariance * beta)[(0, 0)];
    if !(var > 0.0) {
        return Err(Error::invalid("index has zero variance"));
    }
    let sd = var.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Vec::with_capacity(draws);
    let mut gs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let z: f64 = StandardNormal.sample(&mut rng);
        let v = centre + sd * z;
        s.push(v);
        gs.push(g(v));
    }
    let m = draws as f64;
    let s_mean = s.iter().sum::<f64>() / m;
    let g_mean = gs.iter().sum::<f64>() / m;
    let sxx: f64 = s.iter().map(|v| (v - s_mean).powi(2)).sum();
    let sxy: f64 = s.iter().zip(&gs).map(|(a, b)| (a - s_mean) * (b - g_mean)).sum();
    let k = sxy / sxx;
    let meat: f64 = s
        .iter()
        .zip(&gs)
        .map(|(a, b)| {
            let d = a - s_mean;
            let e = b - g_mean - k * d;
            d * d * e * e
        })
        .sum();
    Ok(SteinEstimate {
        k,
        standard_error: meat.sqrt() / sxx,
        draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    /// Linear stages; the recursion then collapses to one OLS fit.
    Identity,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

/// One OLS stage of the recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursiveStage {
    /// q × (number of active inputs).
    #[serde(with = "crate::io::matrix")]
    pub weights: DMatrix<f64>,
    #[serde(with = "crate::io::vector")]
    pub intercept: DVector<f64>,
    /// Columns of the previous stage's features used here; dead (all-zero)
    /// units are skipped.
    pub active_inputs: Vec<usize>,
    pub input_width: usize,
    pub residual_mse: f64,
}

impl RecursiveStage {
    fn linear(&self, z: &DMatrix<f64>, with_intercept: bool) -> DMatrix<f64> {
        let active = select_columns(z, &self.active_inputs);
        let mut out = active * self.weights.transpose();
        if with_intercept {
            for mut row in out.row_iter_mut() {
                row += self.intercept.transpose();
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepRecursiveFit {
    /// Hidden stages from the input side, then the linear top layer.
    pub stages: Vec<RecursiveStage>,
    pub activation: Activation,
    /// Estimated hidden layers are identified only up to positive diagonal
    /// rescaling of their rows.
    pub scale_ambiguity: String,
}

impl DeepRecursiveFit {
    /// Hidden features `Ẑ` after each hidden stage.
    pub fn hidden_features(&self, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        let first = &self.stages[0];
        if x.ncols() != first.input_width {
            return Err(Error::dim(format!(
                "expected {} input columns, found {}",
                first.input_width,
                x.ncols()
            )));
        }
        let mut out = Vec::new();
        let mut z = x.clone();
        for stage in &self.stages[..self.stages.len() - 1] {
            z = stage.linear(&z, false).map(|v| self.activation.apply(v));
            out.push(z.clone());
        }
        Ok(out)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let features = self.hidden_features(x)?;
        let last = features.last().unwrap_or(x);
        Ok(self.stages.last().expect("at least one stage").linear(last, true))
    }

    /// Weight matrix of the stage adjacent to the inputs.
    pub fn input_layer(&self) -> &DMatrix<f64> {
        &self.stages[0].weights
    }
}

/// Fits `Y ≈ B_top σ(B_{L−1} … σ(B_L X))` one stage at a time: each stage
/// regresses `Y` on the current features by OLS and the next features are
/// `σ(B̂ Ẑ)`. Every hidden width therefore equals the number of outputs.
pub fn fit_deep_relu_recursive(x: &DMatrix<f64>, y: &DMatrix<f64>, hidden_dims: &[usize]) -> Result<DeepRecursiveFit> {
    fit_deep_recursive(x, y, hidden_dims, Activation::Relu)
}

pub fn fit_deep_recursive(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    hidden_dims: &[usize],
    activation: Activation,
) -> Result<DeepRecursiveFit> {
    let (n, p) = x.shape();
    let q = y.ncols();
    if y.nrows() != n {
        return Err(Error::dim(format!("x has {n} rows but y has {}", y.nrows())));
    }
    if n <= p.max(q) + 1 {
        return Err(Error::invalid(format!(
            "width exceeds sample size (n = {n}, p = {p}, q = {q})"
        )));
    }
    if let Some(&d) = hidden_dims.iter().find(|&&d| d != q) {
        return Err(Error::invalid(format!(
            "hidden width {d} differs from the output dimension {q}; OLS recursion fixes every width to {q}"
        )));
    }
    let mut stages = Vec::with_capacity(hidden_dims.len() + 1);
    let mut z = x.clone();
    for l in 0..=hidden_dims.len() {
        let width = z.ncols();
        let active: Vec<usize> = (0..width).filter(|&j| z.column(j).iter().any(|&v| v != 0.0)).collect();
        if active.len() < width {
            log::warn!("stage {l}: {} dead units dropped", width - active.len());
        }
        if active.is_empty() {
            return Err(Error::numerical(format!("stage {l}: every unit is dead")));
        }
        let features = select_columns(&z, &active);
        let (intercept, fit) = ols_with_intercept(&features, y)?;
        let mut stage = RecursiveStage {
            weights: fit.coefficients.transpose(),
            intercept,
            active_inputs: active,
            input_width: width,
            residual_mse: 0.0,
        };
        let resid = y - stage.linear(&z, true);
        stage.residual_mse = resid.norm_squared() / (n * q) as f64;
        if l < hidden_dims.len() {
            z = stage.linear(&z, false).map(|v| activation.apply(v));
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical(format!("stage {l}: non-finite features")));
            }
        }
        stages.push(stage);
    }
    Ok(DeepRecursiveFit {
        stages,
        activation,
        scale_ambiguity: "hidden stages are identified up to positive row scaling".into(),
    })
}

/// How closely estimated rows match true rows up to scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionalityReport {
    /// Through-origin regression slope of each estimated row on the true row.
    pub slopes: Vec<f64>,
    pub r_squared: Vec<f64>,
    pub correlations: Vec<f64>,
    /// Principal angles between the row spaces, degrees, ascending.
    pub angles_degrees: Vec<f64>,
}

impl ProportionalityReport {
    pub fn max_angle(&self) -> f64 {
        self.angles_degrees.iter().cloned().fold(0.0, f64::max)
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn proportionality_report(b_hat: &DMatrix<f64>, b_true: &DMatrix<f64>) -> Result<ProportionalityReport> {
    if b_hat.shape() != b_true.shape() {
        return Err(Error::dim(format!(
            "estimate is {:?} but truth is {:?}",
            b_hat.shape(),
            b_true.shape()
        )));
    }
    if b_hat.nrows() == 0 || b_hat.ncols() == 0 {
        return Err(Error::invalid("no rows to compare"));
    }
    let mut slopes = Vec::new();
    let mut r_squared = Vec::new();
    let mut correlations = Vec::new();
    for i in 0..b_hat.nrows() {
        let est: Vec<f64> = b_hat.row(i).iter().copied().collect();
        let truth: Vec<f64> = b_true.row(i).iter().copied().collect();
        let tt: f64 = truth.iter().map(|v| v * v).sum();
        if tt == 0.0 {
            return Err(Error::invalid(format!("true row {i} is zero")));
        }
        let slope = est.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() / tt;
        let ss_tot: f64 = est.iter().map(|v| v * v).sum();
        let ss_res: f64 = est.iter().zip(&truth).map(|(a, b)| (a - slope * b).powi(2)).sum();
        slopes.push(slope);
        r_squared.push(if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 });
        correlations.push(pearson(&est, &truth));
    }
    let angles = principal_angles(b_hat, b_true)?;
    Ok(ProportionalityReport {
        slopes,
        r_squared,
        correlations,
        angles_degrees: angles.iter().map(|a| a.to_degrees()).collect(),
    })
}
