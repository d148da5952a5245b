//! Ridge, principal-components and PLS regression viewed as shrinkage of
//! the OLS solution along the eigen-directions of `V = XᵀX/n`.
//!
//! Every estimator here is written `β = Σ_j f_j α̂_j v_j`, where `v_j` are
//! eigenvectors of `V`, `α̂` is the OLS solution in that basis and `f_j`
//! the per-direction scale factor. Inputs are taken as already
//! standardized; the response is centred internally.
//!
//! Also covers the dropout/ridge equivalence: marginalizing Bernoulli
//! input masks gives a ridge problem with penalty `diag(XᵀX)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::StandardizedMatrix;
use crate::error::{Error, Result};
use crate::linalg::{ols, ridge, sym_eigen, EigenSpectrum, RidgePenalty};
use crate::pls::nipals;

/// Below this magnitude an OLS eigen-coefficient makes `f_j` indeterminate.
pub const ALPHA_EPS: f64 = 1e-12;

const BISECTION_LOWER: f64 = 1e-10;
const BISECTION_UPPER: f64 = 1e10;
const BISECTION_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    Ols,
    /// `β = (V + λI)⁻¹ ave(x y)`.
    Ridge { lambda: f64 },
    Pcr { components: usize },
    Pls { components: usize },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Ols => "ols".into(),
            Method::Ridge { .. } => "ridge".into(),
            Method::Pcr { .. } => "pcr".into(),
            Method::Pls { .. } => "pls".into(),
        }
    }
}

/// Eigen-decomposition of `V` together with the OLS solution in its basis.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub spectrum: EigenSpectrum,
    /// `α̂_j = v_jᵀ β_OLS`.
    pub alpha_hat: DVector<f64>,
    pub beta_ols: DVector<f64>,
    /// Set when `X` is rank deficient and a pseudo-inverse was used.
    pub rank_deficient: bool,
    y_mean: f64,
}

fn check_xy(x: &StandardizedMatrix, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::dim(format!(
            "x has {} rows but y has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::invalid("empty design"));
    }
    Ok(())
}

fn centred(y: &DVector<f64>) -> (DVector<f64>, f64) {
    let mean = y.mean();
    (y.add_scalar(-mean), mean)
}

fn as_column(y: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(y.len(), 1, y.as_slice())
}

impl EigenBasis {
    pub fn new(x: &StandardizedMatrix, y: &DVector<f64>) -> Result<Self> {
        check_xy(x, y)?;
        let n = x.nrows() as f64;
        let v = x.values.transpose() * &x.values / n;
        let spectrum = sym_eigen(&v)?;
        let (yc, y_mean) = centred(y);
        let fit = ols(&x.values, &as_column(&yc))?;
        let rank_deficient = fit.rank < x.ncols();
        if rank_deficient {
            log::warn!("design rank {} < {}: OLS via pseudo-inverse", fit.rank, x.ncols());
        }
        let beta_ols = fit.coefficients.column(0).into_owned();
        let alpha_hat = spectrum.eigenvectors.transpose() * &beta_ols;
        Ok(EigenBasis {
            spectrum,
            alpha_hat,
            beta_ols,
            rank_deficient,
            y_mean,
        })
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.spectrum.eigenvalues
    }

    /// `Σ_j f_j α̂_j v_j`.
    pub fn coefficients_from_factors(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.spectrum.eigenvectors * f.component_mul(&self.alpha_hat)
    }

    /// Fitted values `ȳ + Σ_j f_j α̂_j v_jᵀx`.
    pub fn fitted_from_factors(&self, x: &StandardizedMatrix, f: &DVector<f64>) -> DVector<f64> {
        (&x.values * self.coefficients_from_factors(f)).add_scalar(self.y_mean)
    }

    fn ridge_norm(&self, lambda: f64) -> f64 {
        self.spectrum
            .eigenvalues
            .iter()
            .zip(self.alpha_hat.iter())
            .map(|(&e, &a)| {
                let f = if e + lambda > 0.0 { e / (e + lambda) } else { 0.0 };
                (f * a).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// OLS coefficients expressed in the eigen-basis of `V`.
pub fn alpha_ols(x: &StandardizedMatrix, y: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(EigenBasis::new(x, y)?.alpha_hat)
}

/// Coefficients of a method on the scale of `x`, response centred.
pub fn method_coefficients(method: &Method, x: &StandardizedMatrix, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_xy(x, y)?;
    let p = x.ncols();
    let (yc, _) = centred(y);
    match *method {
        Method::Ols => Ok(ols(&x.values, &as_column(&yc))?.coefficients.column(0).into_owned()),
        Method::Ridge { lambda } => {
            if !(lambda >= 0.0) || !lambda.is_finite() {
                return Err(Error::invalid(format!("ridge penalty must be finite and >= 0, got {lambda}")));
            }
            let n = x.nrows() as f64;
            let b = ridge(&x.values, &as_column(&yc), lambda * n, &RidgePenalty::Identity)?;
            Ok(b.column(0).into_owned())
        }
        Method::Pcr { components } => {
            let basis = EigenBasis::new(x, y)?;
            let f = pcr_factors(basis.eigenvalues(), components)?;
            Ok(basis.coefficients_from_factors(&f))
        }
        Method::Pls { components } => {
            if components == 0 || components > p {
                return Err(Error::invalid(format!("PLS components {components} outside 1..={p}")));
            }
            let factors = nipals(&x.values, &as_column(&yc), components)?;
            if factors.len() == 0 {
                return Ok(DVector::zeros(p));
            }
            if factors.len() < components {
                log::warn!("PLS stopped after {} of {components} components", factors.len());
            }
            let r = factors.projection()?.transpose();
            let b = DVector::from_column_slice(&factors.betas);
            let q = factors.y_loadings.column(0).into_owned();
            Ok(r * b.component_mul(&q))
        }
    }
}

fn pcr_factors(eigenvalues: &DVector<f64>, components: usize) -> Result<DVector<f64>> {
    let p = eigenvalues.len();
    if components > p {
        return Err(Error::invalid(format!("PCR components {components} outside 0..={p}")));
    }
    if components == 0 {
        return Ok(DVector::zeros(p));
    }
    let cut = eigenvalues[components - 1];
    Ok(eigenvalues.map(|e| if e >= cut { 1.0 } else { 0.0 }))
}

/// Per-direction scale factors of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactors {
    pub method: Method,
    pub factors: Vec<f64>,
    /// Directions whose `|α̂_j|` is below [`ALPHA_EPS`]; reported as `f = 1`.
    pub indeterminate: Vec<bool>,
}

/// Scale factors `f_j = v_jᵀβ_M / α̂_j`. PCR factors are the exact 0/1 step.
pub fn scale_factors(method: &Method, x: &StandardizedMatrix, y: &DVector<f64>) -> Result<ScaleFactors> {
    let basis = EigenBasis::new(x, y)?;
    factors_in_basis(&basis, method, x, y)
}

fn factors_in_basis(basis: &EigenBasis, method: &Method, x: &StandardizedMatrix, y: &DVector<f64>) -> Result<ScaleFactors> {
    let indeterminate: Vec<bool> = basis.alpha_hat.iter().map(|a| a.abs() < ALPHA_EPS).collect();
    let factors = if let Method::Pcr { components } = *method {
        pcr_factors(basis.eigenvalues(), components)?.as_slice().to_vec()
    } else {
        let beta = method_coefficients(method, x, y)?;
        let rotated = basis.spectrum.eigenvectors.transpose() * beta;
        rotated
            .iter()
            .zip(basis.alpha_hat.iter())
            .zip(&indeterminate)
            .map(|((&b, &a), &skip)| if skip { 1.0 } else { b / a })
            .collect()
    };
    Ok(ScaleFactors {
        method: *method,
        factors,
        indeterminate,
    })
}

/// Closed-form ridge factors `e_j² / (e_j² + λ)`.
pub fn ridge_factors(eigenvalues: &DVector<f64>, lambda: f64) -> DVector<f64> {
    eigenvalues.map(|e| e / (e + lambda))
}

/// Outcome of matching ridge and PCR to a reference coefficient norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub reference: Method,
    pub reference_norm: f64,
    /// `f64::INFINITY` when the reference is the zero vector.
    pub ridge_lambda: f64,
    pub ridge_norm: f64,
    pub pcr_components: usize,
    pub pcr_norm: f64,
    /// Set when the reference norm is at or beyond `||β_OLS||`, so no
    /// positive amount of shrinkage can match it.
    pub boundary: Option<String>,
}

/// Chooses the ridge penalty (bisection on `log λ`) and PCR component count
/// (nearest norm, ties to fewer components) that give the same coefficient
/// length as `reference`.
pub fn normalize_overall_shrinkage(
    x: &StandardizedMatrix,
    y: &DVector<f64>,
    reference: &Method,
) -> Result<Normalization> {
    let basis = EigenBasis::new(x, y)?;
    let target = method_coefficients(reference, x, y)?.norm();
    let ols_norm = basis.ridge_norm(0.0);
    let mut boundary = None;

    let ridge_lambda = if target == 0.0 {
        f64::INFINITY
    } else if target >= ols_norm * (1.0 - 1e-12) {
        if target > ols_norm * (1.0 + 1e-12) {
            boundary = Some(format!(
                "reference norm {target:.6e} exceeds the OLS norm {ols_norm:.6e}; ridge cannot expand"
            ));
        }
        0.0
    } else {
        let (mut lo, mut hi) = (BISECTION_LOWER.ln(), BISECTION_UPPER.ln());
        if basis.ridge_norm(BISECTION_LOWER) < target {
            0.0
        } else if basis.ridge_norm(BISECTION_UPPER) > target {
            boundary = Some(format!("reference norm {target:.6e} needs λ above {BISECTION_UPPER:e}"));
            BISECTION_UPPER
        } else {
            for _ in 0..BISECTION_ITERS {
                let mid = 0.5 * (lo + hi);
                if basis.ridge_norm(mid.exp()) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-14 {
                    break;
                }
            }
            (0.5 * (lo + hi)).exp()
        }
    };
    let ridge_norm = if ridge_lambda.is_infinite() {
        0.0
    } else {
        basis.ridge_norm(ridge_lambda)
    };

    let p = x.ncols();
    let mut best = (0usize, 0.0f64, f64::INFINITY);
    for l in 0..=p {
        let f = pcr_factors(basis.eigenvalues(), l)?;
        let norm = basis.coefficients_from_factors(&f).norm();
        let gap = (norm - target).abs();
        if gap < best.2 {
            best = (l, norm, gap);
        }
    }
    Ok(Normalization {
        reference: *reference,
        reference_norm: target,
        ridge_lambda,
        ridge_norm,
        pcr_components: best.0,
        pcr_norm: best.1,
        boundary,
    })
}

/// Fitted values of principal-components regression with `0..=l`
/// components, and the corresponding coefficients.
#[derive(Debug, Clone)]
pub struct PcrSequence {
    /// `fitted[k]` uses the top `k` components; `fitted[0]` is the mean.
    pub fitted: Vec<DVector<f64>>,
    pub coefficients: Vec<DVector<f64>>,
}

pub fn pcr_fit_sequence(x: &StandardizedMatrix, y: &DVector<f64>, l: usize) -> Result<PcrSequence> {
    let basis = EigenBasis::new(x, y)?;
    let p = x.ncols();
    if l > p {
        return Err(Error::invalid(format!("PCR components {l} outside 0..={p}")));
    }
    let (yc, mean) = centred(y);
    let mut fitted = vec![DVector::from_element(y.len(), mean)];
    let mut coefficients = vec![DVector::zeros(p)];
    for k in 0..l {
        let v = basis.spectrum.eigenvectors.column(k);
        let z = &x.values * v;
        let zz = z.norm_squared();
        let gamma = if zz > 0.0 { z.dot(&yc) / zz } else { 0.0 };
        fitted.push(&fitted[k] + &z * gamma);
        coefficients.push(&coefficients[k] + v * gamma);
    }
    Ok(PcrSequence {
        fitted,
        coefficients,
    })
}

/// Scale factors of several methods on one design, plus an optional
/// norm-matching record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageReport {
    pub eigenvalues: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub methods: Vec<ScaleFactors>,
    pub normalization: Option<Normalization>,
}

impl ShrinkageReport {
    pub fn new(x: &StandardizedMatrix, y: &DVector<f64>, methods: &[Method]) -> Result<Self> {
        let basis = EigenBasis::new(x, y)?;
        let methods = methods
            .iter()
            .map(|m| factors_in_basis(&basis, m, x, y))
            .collect::<Result<Vec<_>>>()?;
        Ok(ShrinkageReport {
            eigenvalues: basis.eigenvalues().as_slice().to_vec(),
            alpha_hat: basis.alpha_hat.as_slice().to_vec(),
            methods,
            normalization: None,
        })
    }

    /// Ridge and PCR matched to the norm of `reference`, reported next to it.
    pub fn normalized(x: &StandardizedMatrix, y: &DVector<f64>, reference: Method) -> Result<Self> {
        let norm = normalize_overall_shrinkage(x, y, &reference)?;
        let mut methods = vec![reference];
        if norm.ridge_lambda.is_finite() {
            methods.push(Method::Ridge {
                lambda: norm.ridge_lambda,
            });
        }
        methods.push(Method::Pcr {
            components: norm.pcr_components,
        });
        let mut report = ShrinkageReport::new(x, y, &methods)?;
        report.normalization = Some(norm);
        Ok(report)
    }

    /// Wide CSV: one row per eigen-direction, one factor column per method.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["direction".to_string(), "eigenvalue".into(), "alpha_hat".into()];
        for m in &self.methods {
            header.push(format!("f_{}", m.method.label()));
        }
        w.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
        for j in 0..self.eigenvalues.len() {
            let mut rec = vec![(j + 1).to_string(), self.eigenvalues[j].to_string(), self.alpha_hat[j].to_string()];
            rec.extend(self.methods.iter().map(|m| m.factors[j].to_string()));
            w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

fn check_keep(p_keep: f64) -> Result<()> {
    if !(p_keep > 0.0 && p_keep < 1.0) {
        return Err(Error::invalid(format!("keep probability must lie in (0, 1), got {p_keep}")));
    }
    Ok(())
}

fn gram_diagonal(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.norm_squared()))
}

/// Minimizer of the marginalized dropout objective
/// `||Y − p X W||² + p(1−p) ||Γ W||²` with `Γ = diag(XᵀX)^{1/2}`.
pub fn dropout_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, p_keep: f64) -> Result<DMatrix<f64>> {
    check_keep(p_keep)?;
    let gamma = gram_diagonal(x).map(f64::sqrt);
    let b = ridge(x, y, (1.0 - p_keep) / p_keep, &RidgePenalty::Diagonal(gamma))?;
    Ok(b / p_keep)
}

/// The marginalized dropout objective evaluated at `w`.
pub fn dropout_objective(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &DMatrix<f64>, p_keep: f64) -> Result<f64> {
    check_keep(p_keep)?;
    let resid = y - x * w * p_keep;
    let g2 = gram_diagonal(x);
    let penalty: f64 = (0..w.nrows()).map(|i| g2[i] * w.row(i).norm_squared()).sum();
    Ok(resid.norm_squared() + p_keep * (1.0 - p_keep) * penalty)
}

/// Gradient of [`dropout_objective`] with respect to `w`.
pub fn dropout_gradient(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &DMatrix<f64>, p_keep: f64) -> Result<DMatrix<f64>> {
    check_keep(p_keep)?;
    let g2 = DMatrix::from_diagonal(&gram_diagonal(x));
    Ok(x.transpose() * (y - x * w * p_keep) * (-2.0 * p_keep) + g2 * w * (2.0 * p_keep * (1.0 - p_keep)))
}

/// Monte Carlo mean and standard error of `||Y − (D ⋆ X) W||²` over
/// element-wise Bernoulli(p_keep) masks `D`.
pub fn dropout_mc_objective(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    w: &DMatrix<f64>,
    p_keep: f64,
    masks: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_keep(p_keep)?;
    if masks < 2 {
        return Err(Error::invalid("need at least two masks"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropped = x.clone();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..masks {
        for (d, &v) in dropped.iter_mut().zip(x.iter()) {
            *d = if rng.random::<f64>() < p_keep { v } else { 0.0 };
        }
        let loss = (y - &dropped * w).norm_squared();
        sum += loss;
        sum_sq += loss * loss;
    }
    let m = masks as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean) * m / (m - 1.0);
    Ok((mean, (var.max(0.0) / m).sqrt()))
}
