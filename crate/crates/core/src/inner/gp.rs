//! One-dimensional Gaussian-process regression of each Y-score on the
//! matching X-score, with a squared-exponential kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Jitter tried first when the noise variance is zero, then raised tenfold
/// until the factorization succeeds.
pub const INITIAL_JITTER: f64 = 1e-8;
const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum GpMean {
    Zero,
    Constant(f64),
}

impl GpMean {
    fn value(self) -> f64 {
        match self {
            GpMean::Zero => 0.0,
            GpMean::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub mean: GpMean,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            lengthscale: 1.0,
            signal_variance: 1.0,
            noise_variance: 0.01,
            mean: GpMean::Zero,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::invalid(format!("lengthscale must be positive, got {}", self.lengthscale)));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::invalid("signal variance must be positive"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::invalid("noise variance must be non-negative"));
        }
        Ok(())
    }

    pub fn kernel(&self, a: f64, b: f64) -> f64 {
        let d = (a - b) / self.lengthscale;
        self.signal_variance * (-0.5 * d * d).exp()
    }

    fn gram(&self, a: &[f64], b: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.kernel(a[i], b[j]))
    }
}

/// A fitted GP for one score pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpScoreModel {
    pub config: GpConfig,
    pub inputs: Vec<f64>,
    /// `K⁻¹ (u − m)`.
    #[serde(with = "io::vector")]
    pub weights: DVector<f64>,
    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    #[serde(with = "io::matrix")]
    pub factor: DMatrix<f64>,
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpPrediction {
    pub mean: DVector<f64>,
    /// Latent variance `K** − K*ᵀ K⁻¹ K*`, without observation noise.
    pub variance: DVector<f64>,
}

fn factorize(k: &DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = if noise > 0.0 { 0.0 } else { INITIAL_JITTER };
    loop {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += noise + jitter;
        }
        if let Some(ch) = m.cholesky() {
            if jitter > INITIAL_JITTER {
                log::warn!("kernel matrix needed jitter {jitter:e}");
            }
            return Ok((ch, jitter));
        }
        jitter = if jitter == 0.0 { INITIAL_JITTER } else { jitter * 10.0 };
        if jitter > MAX_JITTER {
            return Err(Error::numerical(format!(
                "kernel matrix not positive definite even with jitter {MAX_JITTER:e}"
            )));
        }
    }
}

pub fn fit_gp(t: &DVector<f64>, u: &DVector<f64>, cfg: &GpConfig) -> Result<GpScoreModel> {
    cfg.validate()?;
    if t.len() != u.len() {
        return Err(Error::dim(format!("{} scores but {} targets", t.len(), u.len())));
    }
    if t.is_empty() {
        return Err(Error::invalid("no training points"));
    }
    if t.iter().chain(u.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains non-finite values"));
    }
    let k = cfg.gram(t.as_slice(), t.as_slice());
    let (ch, jitter) = factorize(&k, cfg.noise_variance)?;
    let weights = ch.solve(&u.add_scalar(-cfg.mean.value()));
    Ok(GpScoreModel {
        config: *cfg,
        inputs: t.as_slice().to_vec(),
        weights,
        factor: ch.l(),
        jitter,
    })
}

impl GpScoreModel {
    pub fn predict(&self, t_star: &DVector<f64>) -> GpPrediction {
        let k_star = self.config.gram(&self.inputs, t_star.as_slice());
        let mean = (k_star.transpose() * &self.weights).add_scalar(self.config.mean.value());
        let v = self
            .factor
            .solve_lower_triangular(&k_star)
            .expect("factor has a positive diagonal");
        let variance = DVector::from_fn(t_star.len(), |j, _| {
            (self.config.signal_variance - v.column(j).norm_squared()).max(0.0)
        });
        GpPrediction { mean, variance }
    }
}

/// `L` independent GPs, one per score pair `(t_k, u_k)`.
pub fn fit_gp_scores(t: &DMatrix<f64>, u: &DMatrix<f64>, cfg: &GpConfig) -> Result<Vec<GpScoreModel>> {
    if t.shape() != u.shape() {
        return Err(Error::dim(format!(
            "scores are {:?} but targets are {:?}",
            t.shape(),
            u.shape()
        )));
    }
    (0..t.ncols())
        .map(|k| fit_gp(&t.column(k).into_owned(), &u.column(k).into_owned(), cfg))
        .collect()
}
