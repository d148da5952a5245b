//! Two-block partial least squares.
//!
//! Components are extracted one at a time: the direction pair is the
//! leading singular pair of the deflated cross-product `X_resᵀ Y_res`,
//! scores are `t = X_res w` and `u = Y_res q`, and both blocks are deflated
//! by the rank-one fit of `t` before the next component.
//!
//! Also provides the Krylov closed form and the sequential-regression
//! formulation of the single-response estimator, cross-validated component
//! selection, and the scree values of `XᵀY`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{select_rows, standardize, StandardizedMatrix, Standardizer};
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{self, ols, svd};

/// How the Y-scores are related to the X-scores in the linear model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerMode {
    /// Scalar regression of `u_l` on `t_l` for each component.
    #[default]
    PerComponent,
    /// Joint L×L regression of the Y-scores on all X-scores.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "values", rename_all = "kebab-case")]
pub enum InnerCoefficients {
    PerComponent(Vec<f64>),
    #[serde(with = "io::matrix")]
    Full(DMatrix<f64>),
}

impl InnerCoefficients {
    /// The coefficients as an L×L matrix (diagonal in per-component mode).
    pub fn as_matrix(&self) -> DMatrix<f64> {
        match self {
            InnerCoefficients::PerComponent(b) => DMatrix::from_diagonal(&DVector::from_column_slice(b)),
            InnerCoefficients::Full(m) => m.clone(),
        }
    }

    fn leading(&self, l: usize) -> DMatrix<f64> {
        self.as_matrix().view((0, 0), (l, l)).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlsConfig {
    pub components: usize,
    pub inner_mode: InnerMode,
}

impl PlsConfig {
    pub fn new(components: usize) -> Self {
        PlsConfig {
            components,
            inner_mode: InnerMode::PerComponent,
        }
    }
}

/// A fitted PLS decomposition. Matrices with one row per component are
/// stored L×p / L×q, matching `X ≈ T P` and `Y ≈ U Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsModel {
    pub n_components: usize,
    /// Unit direction `w_l` applied to the deflated X block (rows orthonormal).
    #[serde(with = "io::matrix")]
    pub weights: DMatrix<f64>,
    /// Deflation loadings `p_l = X_resᵀ t_l / ||t_l||²`.
    #[serde(with = "io::matrix")]
    pub x_loadings: DMatrix<f64>,
    /// Projection giving `T = X_std projectionᵀ` on the undeflated block.
    #[serde(with = "io::matrix")]
    pub projection: DMatrix<f64>,
    /// Unit Y directions `q_l`.
    #[serde(with = "io::matrix")]
    pub y_loadings: DMatrix<f64>,
    #[serde(with = "io::matrix")]
    pub x_scores: DMatrix<f64>,
    #[serde(with = "io::matrix")]
    pub y_scores: DMatrix<f64>,
    /// Least-squares Y-scores `Y_std Q⁺`: the targets a nonlinear inner
    /// model is trained on so that `Û Q` approximates `Y_std`.
    #[serde(with = "io::matrix")]
    pub inner_targets: DMatrix<f64>,
    pub inner: InnerCoefficients,
    pub x_standardization: Standardizer,
    pub y_standardization: Standardizer,
    pub warnings: Vec<String>,
}

/// PLS regression coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// p×q, maps standardized X to standardized Y.
    pub standardized: DMatrix<f64>,
    /// p×q, maps raw X to raw Y together with `intercept`.
    pub raw: DMatrix<f64>,
    pub intercept: DVector<f64>,
}

impl Coefficients {
    pub fn predict(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_raw.ncols() != self.raw.nrows() {
            return Err(Error::dim(format!(
                "expected {} input columns, found {}",
                self.raw.nrows(),
                x_raw.ncols()
            )));
        }
        let mut y = x_raw * &self.raw;
        for mut row in y.row_iter_mut() {
            row += self.intercept.transpose();
        }
        Ok(y)
    }
}

pub(crate) struct Factors {
    pub weights: DMatrix<f64>,
    pub x_loadings: DMatrix<f64>,
    pub y_loadings: DMatrix<f64>,
    pub x_scores: DMatrix<f64>,
    pub y_scores: DMatrix<f64>,
    pub betas: Vec<f64>,
    pub early_stop: Option<String>,
}

impl Factors {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    /// `W (P Wᵀ)⁻¹` transposed: rows give `T = X projectionᵀ`.
    pub fn projection(&self) -> Result<DMatrix<f64>> {
        let pw = &self.x_loadings * self.weights.transpose();
        let inv = match pw.clone().try_inverse() {
            Some(inv) => inv,
            None => svd(&pw)?.pseudo_inverse(),
        };
        Ok((self.weights.transpose() * inv).transpose())
    }
}

/// Component extraction on already centred/scaled blocks. Stops early
/// (recording why) when the residual cross-covariance vanishes.
pub(crate) fn nipals(x: &DMatrix<f64>, y: &DMatrix<f64>, l: usize) -> Result<Factors> {
    let (n, p) = x.shape();
    let q = y.ncols();
    if y.nrows() != n {
        return Err(Error::dim(format!("x has {n} rows but y has {}", y.nrows())));
    }
    let mut e = x.clone();
    let mut f = y.clone();
    let mut weights = Vec::new();
    let mut x_loadings = Vec::new();
    let mut y_loadings = Vec::new();
    let mut x_scores = Vec::new();
    let mut y_scores = Vec::new();
    let mut betas = Vec::new();
    let mut early_stop = None;
    let mut first_sigma = 0.0;
    let x_norm2 = x.norm_squared();

    for comp in 0..l {
        let m = e.transpose() * &f;
        let dec = svd(&m)?;
        let sigma = dec.singular_values[0];
        if comp == 0 {
            first_sigma = sigma;
        }
        if !(sigma > 1e-10 * first_sigma) || sigma == 0.0 {
            early_stop = Some(format!(
                "residual cross-covariance vanished after {comp} components"
            ));
            break;
        }
        let w = dec.left.column(0).into_owned();
        let qv = dec.right.column(0).into_owned();
        let t = &e * &w;
        let tt = t.norm_squared();
        if !(tt > 1e-24 * x_norm2) {
            early_stop = Some(format!("x-score {comp} has zero norm"));
            break;
        }
        let pl = e.transpose() * &t / tt;
        let u = &f * &qv;
        let beta = u.dot(&t) / tt;
        e -= &t * pl.transpose();
        f -= &t * (qv.transpose() * beta);

        weights.push(w);
        x_loadings.push(pl);
        y_loadings.push(qv);
        x_scores.push(t);
        y_scores.push(u);
        betas.push(beta);
    }
    let k = betas.len();
    let stack_rows = |vs: &[DVector<f64>], width: usize| {
        DMatrix::from_fn(k, width, |i, j| vs[i][j])
    };
    let stack_cols = |vs: &[DVector<f64>]| DMatrix::from_fn(n, k, |i, j| vs[j][i]);
    Ok(Factors {
        weights: stack_rows(&weights, p),
        x_loadings: stack_rows(&x_loadings, p),
        y_loadings: stack_rows(&y_loadings, q),
        x_scores: stack_cols(&x_scores),
        y_scores: stack_cols(&y_scores),
        betas,
        early_stop,
    })
}

/// Fits `cfg.components` PLS components to standardized blocks.
pub fn fit_pls(x: &StandardizedMatrix, y: &StandardizedMatrix, cfg: &PlsConfig) -> Result<PlsModel> {
    let l = cfg.components;
    if x.nrows() != y.nrows() {
        return Err(Error::dim(format!(
            "x has {} rows but y has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::invalid("PLS needs at least two rows"));
    }
    if l == 0 {
        return Err(Error::invalid("number of components must be at least 1"));
    }
    let rank = svd(&x.values)?.rank();
    if l > rank {
        return Err(Error::invalid(format!(
            "{l} components exceed the numerical rank {rank} of X"
        )));
    }
    let factors = nipals(&x.values, &y.values, l)?;
    let mut warnings = Vec::new();
    if let Some(msg) = &factors.early_stop {
        log::warn!("{msg}");
        warnings.push(msg.clone());
    }
    if factors.len() == 0 {
        return Err(Error::numerical("X and Y have zero cross-covariance"));
    }
    let k = factors.len();
    let projection = factors.projection()?;
    let q_pinv = svd(&factors.y_loadings)?.pseudo_inverse();
    let inner_targets = &y.values * q_pinv;
    let inner = match cfg.inner_mode {
        InnerMode::PerComponent => InnerCoefficients::PerComponent(factors.betas.clone()),
        InnerMode::Full => InnerCoefficients::Full(ols(&factors.x_scores, &inner_targets)?.coefficients),
    };
    Ok(PlsModel {
        n_components: k,
        weights: factors.weights,
        x_loadings: factors.x_loadings,
        projection,
        y_loadings: factors.y_loadings,
        x_scores: factors.x_scores,
        y_scores: factors.y_scores,
        inner_targets,
        inner,
        x_standardization: x.params.clone(),
        y_standardization: y.params.clone(),
        warnings,
    })
}

impl PlsModel {
    /// Standardizes raw blocks and fits.
    pub fn fit(x_raw: &DMatrix<f64>, y_raw: &DMatrix<f64>, cfg: &PlsConfig) -> Result<Self> {
        fit_pls(&standardize(x_raw), &standardize(y_raw), cfg)
    }

    pub fn n_inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.y_loadings.ncols()
    }

    /// `β_PLS = Pᵀ β Q` on the standardized scale, plus the raw-unit version.
    pub fn coefficients(&self) -> Coefficients {
        let standardized =
            self.projection.transpose() * self.inner.as_matrix() * &self.y_loadings;
        let xs = &self.x_standardization;
        let ys = &self.y_standardization;
        let raw = DMatrix::from_fn(standardized.nrows(), standardized.ncols(), |i, k| {
            if xs.degenerate[i] {
                0.0
            } else {
                standardized[(i, k)] * ys.scales[k] / xs.scales[i]
            }
        });
        let intercept = ys.means_vector() - raw.transpose() * xs.means_vector();
        Coefficients {
            standardized,
            raw,
            intercept,
        }
    }

    /// X-scores of new raw rows: standardize with the training parameters,
    /// then project.
    pub fn scores(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let z = self.x_standardization.apply(x_raw)?;
        Ok(z * self.projection.transpose())
    }

    /// Maps predicted Y-scores to raw outputs: `Ŷ = destandardize(Û Q)`.
    pub fn outputs_from_scores(&self, u_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if u_hat.ncols() != self.n_components {
            return Err(Error::dim(format!(
                "expected {} score columns, found {}",
                self.n_components,
                u_hat.ncols()
            )));
        }
        self.y_standardization.invert(&(u_hat * &self.y_loadings))
    }

    /// Linear PLS prediction through the score path.
    pub fn predict(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let t = self.scores(x_raw)?;
        self.outputs_from_scores(&(t * self.inner.as_matrix()))
    }

    /// Standardized-scale predictions using only the first `l` components.
    fn predict_prefix_std(&self, x_std: &DMatrix<f64>, l: usize) -> DMatrix<f64> {
        let r = self.projection.rows(0, l).transpose();
        let q = self.y_loadings.rows(0, l);
        x_std * r * self.inner.leading(l) * q
    }
}

/// Output of the Krylov closed form.
#[derive(Debug, Clone)]
pub struct HellandFit {
    /// Slopes on the columns of the supplied (standardized) X.
    pub beta: DVector<f64>,
    pub intercept: f64,
    /// Krylov dimension actually used; smaller than requested when the
    /// sequence `S_xy, S_xx S_xy, …` becomes linearly dependent.
    pub effective_k: usize,
}

impl HellandFit {
    pub fn fitted(&self, x: &DMatrix<f64>) -> DVector<f64> {
        (x * &self.beta).add_scalar(self.intercept)
    }
}

fn krylov_inputs(x: &StandardizedMatrix, y: &DVector<f64>, k: usize) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::dim(format!("x has {n} rows but y has {}", y.len())));
    }
    if n < 2 {
        return Err(Error::invalid("need at least two rows"));
    }
    if k == 0 || k > p {
        return Err(Error::invalid(format!("Krylov dimension {k} outside 1..={p}")));
    }
    let mean = y.sum() / n as f64;
    Ok((x.values.clone(), y.add_scalar(-mean), mean))
}

/// Orthonormal basis of the Krylov space `(s, V s, …, V^{k−1} s)`, built by
/// Gram–Schmidt on successive powers. Stops when a new direction is
/// numerically dependent.
fn krylov_basis(v: &DMatrix<f64>, s: &DVector<f64>, k: usize) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k);
    let s_norm = s.norm();
    if s_norm == 0.0 {
        return basis;
    }
    let mut current = s / s_norm;
    for _ in 0..k {
        let mut r = current.clone();
        // two passes of classical Gram-Schmidt
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&r);
                r -= b * c;
            }
        }
        let norm = r.norm();
        if norm <= 1e-10 * current.norm() {
            break;
        }
        let dir = r / norm;
        current = v * &dir;
        basis.push(dir);
    }
    basis
}

/// Closed-form PLS estimator `R (Rᵀ S_xx R)⁻¹ Rᵀ S_xy` with Krylov basis
/// `R = (S_xy, S_xx S_xy, …, S_xx^{K−1} S_xy)`, for a single response.
///
/// `y` is centred internally; pass it on whatever scale the coefficients
/// should be expressed in.
pub fn helland_beta(x: &StandardizedMatrix, y: &DVector<f64>, k: usize) -> Result<HellandFit> {
    let (xv, yc, mean) = krylov_inputs(x, y, k)?;
    let denom = (xv.nrows() - 1) as f64;
    let sxx = xv.transpose() * &xv / denom;
    let sxy = xv.transpose() * &yc / denom;
    let basis = krylov_basis(&sxx, &sxy, k);
    let effective_k = basis.len();
    if effective_k < k {
        log::warn!("Krylov space degenerate: using {effective_k} of {k} directions");
    }
    let p = xv.ncols();
    if effective_k == 0 {
        return Ok(HellandFit {
            beta: DVector::zeros(p),
            intercept: mean,
            effective_k,
        });
    }
    let r = DMatrix::from_fn(p, effective_k, |i, j| basis[j][i]);
    let inner = r.transpose() * &sxx * &r;
    let rhs = r.transpose() * &sxy;
    let coef = match inner.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => svd(&inner)?.pseudo_inverse() * rhs,
    };
    Ok(HellandFit {
        beta: r * coef,
        intercept: mean,
        effective_k,
    })
}

/// Sequential formulation: for `K = 1..k`, regress `y` on the features
/// `(s_jᵀ x)_{j ≤ K}` with `s_j = V^{j−1} s`. Returns the fitted values
/// `ŷ_1, …, ŷ_k` (fewer if the Krylov sequence degenerates).
pub fn helland_iterative(x: &StandardizedMatrix, y: &DVector<f64>, k: usize) -> Result<Vec<DVector<f64>>> {
    let (xv, yc, mean) = krylov_inputs(x, y, k)?;
    let n = xv.nrows() as f64;
    let v = xv.transpose() * &xv / n;
    let s = xv.transpose() * &yc / n;
    let p = xv.ncols();
    let mut directions: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut current = s;
    let mut fitted = Vec::with_capacity(k);
    let ymat = DMatrix::from_column_slice(yc.len(), 1, yc.as_slice());
    for _ in 0..k {
        let norm = current.norm();
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        // rescaling s_k leaves the regression fit unchanged
        let dir = &current / norm;
        if !directions.is_empty() {
            let basis = DMatrix::from_fn(p, directions.len(), |i, j| directions[j][i]);
            let proj = &basis * svd(&basis)?.pseudo_inverse() * &dir;
            if (&dir - proj).norm() <= 1e-10 {
                log::warn!("Krylov sequence degenerate after {} steps", directions.len());
                break;
            }
        }
        current = &v * &dir;
        directions.push(dir);
        let s_mat = DMatrix::from_fn(p, directions.len(), |i, j| directions[j][i]);
        let features = &xv * s_mat;
        let coef = ols(&features, &ymat)?.coefficients;
        let yhat = (features * coef).column(0).add_scalar(mean);
        fitted.push(yhat);
    }
    Ok(fitted)
}

/// Cross-validated prediction error per candidate component count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub candidates: Vec<usize>,
    /// Mean held-out squared error (raw units, averaged over rows and outputs).
    pub mean_squared_error: Vec<f64>,
    pub chosen: usize,
    pub seed: u64,
    /// Fold index of every row.
    pub fold_of: Vec<usize>,
}

/// Row-to-fold assignment: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut fold_of = vec![0; n];
    for (pos, &row) in idx.iter().enumerate() {
        fold_of[row] = pos % folds;
    }
    fold_of
}

/// K-fold cross-validation over `L = 1..=l_max`. Each fold re-estimates the
/// standardization on its training rows only. Ties go to the smaller `L`.
pub fn select_components_cv(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    folds: usize,
    l_max: usize,
    seed: u64,
) -> Result<CvCurve> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::dim(format!("x has {n} rows but y has {}", y.nrows())));
    }
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if l_max == 0 || l_max > x.ncols() {
        return Err(Error::invalid(format!(
            "maximum component count {l_max} outside 1..={}",
            x.ncols()
        )));
    }
    if n < folds {
        return Err(Error::invalid(format!("{n} rows cannot fill {folds} folds")));
    }
    let smallest_train = n - n.div_ceil(folds);
    if smallest_train <= l_max {
        return Err(Error::invalid(format!(
            "fold too small: {smallest_train} training rows for up to {l_max} components"
        )));
    }
    let fold_of = fold_assignment(n, folds, seed);
    let mut sse = vec![0.0; l_max];
    let mut count = 0usize;
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        let xs = standardize(&select_rows(x, &train));
        let ys = standardize(&select_rows(y, &train));
        let factors = nipals(&xs.values, &ys.values, l_max)?;
        let x_test = xs.params.apply(&select_rows(x, &test))?;
        let y_test = select_rows(y, &test);
        count += y_test.len();
        let k = factors.len();
        if k == 0 {
            // no usable direction: every candidate predicts the training mean
            let pred = ys.params.invert(&DMatrix::zeros(test.len(), y.ncols()))?;
            let err = (&pred - &y_test).norm_squared();
            sse.iter_mut().for_each(|s| *s += err);
            continue;
        }
        let model = PlsModel {
            n_components: k,
            projection: factors.projection()?,
            inner: InnerCoefficients::PerComponent(factors.betas.clone()),
            weights: factors.weights,
            x_loadings: factors.x_loadings,
            y_loadings: factors.y_loadings,
            x_scores: factors.x_scores,
            y_scores: factors.y_scores,
            inner_targets: DMatrix::zeros(0, 0),
            x_standardization: xs.params.clone(),
            y_standardization: ys.params.clone(),
            warnings: vec![],
        };
        for (l, s) in sse.iter_mut().enumerate() {
            let used = (l + 1).min(k);
            let pred = ys.params.invert(&model.predict_prefix_std(&x_test, used))?;
            *s += (&pred - &y_test).norm_squared();
        }
    }
    let mse: Vec<f64> = sse.iter().map(|s| s / count as f64).collect();
    let mut chosen = 0;
    for (i, &v) in mse.iter().enumerate() {
        if v < mse[chosen] {
            chosen = i;
        }
    }
    Ok(CvCurve {
        candidates: (1..=l_max).collect(),
        mean_squared_error: mse,
        chosen: chosen + 1,
        seed,
        fold_of,
    })
}

/// Singular values of `X_stdᵀ Y_std`, descending.
pub fn scree_values(x: &StandardizedMatrix, y: &StandardizedMatrix) -> Result<DVector<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::dim(format!(
            "x has {} rows but y has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    Ok(svd(&(x.values.transpose() * &y.values))?.singular_values)
}

/// Convenience: raw-unit OLS with intercept, used as a reference fit.
pub fn ols_reference(x_raw: &DMatrix<f64>, y_raw: &DMatrix<f64>) -> Result<Coefficients> {
    let (intercept, fit) = linalg::ols_with_intercept(x_raw, y_raw)?;
    Ok(Coefficients {
        standardized: DMatrix::zeros(0, 0),
        raw: fit.coefficients,
        intercept,
    })
}
