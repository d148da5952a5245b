//! Dense linear algebra used throughout the crate.
//!
//! Decompositions are delegated to `nalgebra`; this module fixes the
//! ordering and sign conventions so results are reproducible, and layers
//! least squares, ridge and low-rank helpers on top.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const SVD_MAX_ITER: usize = 10_000;
const PINV_RELATIVE_CUTOFF: f64 = 1e-12;

/// Thin singular value decomposition `a = left * diag(s) * right^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// n×r, orthonormal columns.
    pub left: DMatrix<f64>,
    /// Nonincreasing, nonnegative.
    pub singular_values: DVector<f64>,
    /// m×r, orthonormal columns.
    pub right: DMatrix<f64>,
}

/// Flip the sign of a vector so its largest-magnitude entry is positive.
/// Returns the applied sign.
pub(crate) fn sign_of_largest(v: &[f64]) -> f64 {
    let mut best = 0.0_f64;
    let mut sign = 1.0;
    for &x in v {
        if x.abs() > best {
            best = x.abs();
            sign = if x < 0.0 { -1.0 } else { 1.0 };
        }
    }
    sign
}

/// Singular value decomposition with descending singular values and each
/// right singular vector's largest-magnitude entry made positive.
pub fn svd(a: &DMatrix<f64>) -> Result<Svd> {
    let (n, m) = a.shape();
    if n == 0 || m == 0 {
        return Err(Error::dim("svd of an empty matrix"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("svd input contains non-finite entries"));
    }
    let dec = a
        .clone()
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| {
            let fro = a.norm();
            Error::numerical(format!(
                "svd did not converge after {SVD_MAX_ITER} iterations ({n}x{m}, frobenius norm {fro:.3e})"
            ))
        })?;
    let mut u = dec.u.expect("u requested");
    let mut v_t = dec.v_t.expect("v_t requested");
    let mut values = dec.singular_values;
    // nalgebra occasionally returns inaccurate vectors for rank-deficient input
    if !reconstructs(a, &u, &values, &v_t) {
        log::debug!("svd residual check failed on {n}x{m}; using Jacobi");
        (u, values, v_t) = jacobi_svd(a);
    }
    let dec = ThinSvd {
        singular_values: values,
    };
    let r = dec.singular_values.len();

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]));

    let mut left = DMatrix::zeros(n, r);
    let mut right = DMatrix::zeros(m, r);
    let mut s = DVector::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        let v_col: Vec<f64> = v_t.row(src).iter().copied().collect();
        let sign = sign_of_largest(&v_col);
        s[dst] = dec.singular_values[src];
        for i in 0..m {
            right[(i, dst)] = sign * v_col[i];
        }
        for i in 0..n {
            left[(i, dst)] = sign * u[(i, src)];
        }
    }
    Ok(Svd {
        left,
        singular_values: s,
        right,
    })
}

struct ThinSvd {
    singular_values: DVector<f64>,
}

fn reconstructs(a: &DMatrix<f64>, u: &DMatrix<f64>, s: &DVector<f64>, v_t: &DMatrix<f64>) -> bool {
    let scale = s.amax().max(f64::MIN_POSITIVE);
    let tol = 1e-11 * scale * (a.nrows().max(a.ncols()) as f64).sqrt();
    let av = a * v_t.transpose();
    for j in 0..s.len() {
        let resid = (av.column(j) - u.column(j) * s[j]).amax();
        if !(resid <= tol) {
            return false;
        }
    }
    let k = s.len();
    let orth = (u.transpose() * u - DMatrix::<f64>::identity(k, k)).amax()
        + (v_t * v_t.transpose() - DMatrix::<f64>::identity(k, k)).amax();
    orth <= 1e-10
}

/// One-sided (Hestenes) Jacobi SVD. Slower than the bidiagonal method but
/// accurate for rank-deficient input.
fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    if a.nrows() < a.ncols() {
        let (u, s, v_t) = jacobi_svd(&a.transpose());
        return (v_t.transpose(), s, u.transpose());
    }
    let (n, m) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(m, m);
    for _sweep in 0..100 {
        let mut rotated = false;
        for i in 0..m {
            for j in (i + 1)..m {
                let alpha = w.column(i).norm_squared();
                let beta = w.column(j).norm_squared();
                let gamma = w.column(i).dot(&w.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for r in 0..mat.nrows() {
                        let (x, y) = (mat[(r, i)], mat[(r, j)]);
                        mat[(r, i)] = c * x - s * y;
                        mat[(r, j)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s = DVector::from_fn(m, |j, _| w.column(j).norm());
    let s_max = s.amax();
    let mut u = DMatrix::zeros(n, m);
    let mut filled = vec![false; m];
    for j in 0..m {
        if s[j] > f64::EPSILON * s_max * n as f64 && s[j] > 0.0 {
            u.set_column(j, &(w.column(j) / s[j]));
            filled[j] = true;
        }
    }
    // complete the basis for null directions
    let mut e = 0;
    for j in 0..m {
        if filled[j] {
            continue;
        }
        while e < n {
            let mut cand = DVector::<f64>::zeros(n);
            cand[e] = 1.0;
            e += 1;
            for _ in 0..2 {
                for k in 0..m {
                    if filled[k] {
                        let proj = u.column(k).dot(&cand);
                        cand -= u.column(k) * proj;
                    }
                }
            }
            let norm = cand.norm();
            if norm > 1e-8 {
                u.set_column(j, &(cand / norm));
                filled[j] = true;
                break;
            }
        }
    }
    let s = DVector::from_fn(m, |j, _| if filled[j] && s[j] > f64::EPSILON * s_max * n as f64 { s[j] } else { 0.0 });
    (u, s, v.transpose())
}

impl Svd {
    pub fn len(&self) -> usize {
        self.singular_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.singular_values.is_empty()
    }

    /// Threshold below which singular values are treated as zero:
    /// `max(n, m) * s_1 * 1e-12`.
    pub fn cutoff(&self) -> f64 {
        let n = self.left.nrows().max(self.right.nrows()) as f64;
        let s1 = if self.is_empty() { 0.0 } else { self.singular_values[0] };
        n * s1 * PINV_RELATIVE_CUTOFF
    }

    /// Numerical rank under [`Svd::cutoff`].
    pub fn rank(&self) -> usize {
        let cut = self.cutoff();
        self.singular_values.iter().filter(|&&s| s > cut && s > 0.0).count()
    }

    /// Best rank-`l` approximation `left_l * diag(s_l) * right_l^T`.
    pub fn truncated(&self, l: usize) -> Result<DMatrix<f64>> {
        if l == 0 || l > self.len() {
            return Err(Error::invalid(format!(
                "truncation rank {l} outside 1..={}",
                self.len()
            )));
        }
        let u = self.left.columns(0, l);
        let v = self.right.columns(0, l);
        let mut us = u.into_owned();
        for j in 0..l {
            let s = self.singular_values[j];
            us.column_mut(j).scale_mut(s);
        }
        Ok(us * v.transpose())
    }

    /// Moore-Penrose pseudo-inverse with the relative cutoff applied.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let cut = self.cutoff();
        let r = self.len();
        let mut v_scaled = self.right.clone();
        for j in 0..r {
            let s = self.singular_values[j];
            let inv = if s > cut && s > 0.0 { 1.0 / s } else { 0.0 };
            v_scaled.column_mut(j).scale_mut(inv);
        }
        v_scaled * self.left.transpose()
    }
}

/// Best rank-`l` approximation of the decomposed matrix.
pub fn truncated_approx(s: &Svd, l: usize) -> Result<DMatrix<f64>> {
    s.truncated(l)
}

/// Least-squares coefficients together with the numerical rank of the design.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// p×q.
    pub coefficients: DMatrix<f64>,
    pub rank: usize,
}

/// Minimum-norm least squares `argmin ||x b - y||` via the SVD pseudo-inverse.
pub fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LeastSquares> {
    if x.nrows() != y.nrows() {
        return Err(Error::dim(format!(
            "ols: x has {} rows but y has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("ols: no rows"));
    }
    let dec = svd(x)?;
    let rank = dec.rank();
    Ok(LeastSquares {
        coefficients: dec.pseudo_inverse() * y,
        rank,
    })
}

/// Least squares with an unpenalised intercept. Returns `(intercept, slopes)`.
pub fn ols_with_intercept(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<(DVector<f64>, LeastSquares)> {
    let x_mean = column_means(x);
    let y_mean = column_means(y);
    let xc = center_columns(x, &x_mean);
    let yc = center_columns(y, &y_mean);
    let fit = ols(&xc, &yc)?;
    let intercept = y_mean - fit.coefficients.transpose() * x_mean;
    Ok((intercept, fit))
}

/// Penalty matrix `Γ` in the ridge objective `||y - x b||² + λ ||Γ b||²`.
#[derive(Debug, Clone, PartialEq)]
pub enum RidgePenalty {
    Identity,
    /// Diagonal entries of `Γ`.
    Diagonal(DVector<f64>),
}

/// Solves `(xᵀx + λ ΓᵀΓ) b = xᵀy`.
///
/// When `λ = 0` or the system is not positive definite the minimum-norm
/// least-squares solution is returned instead.
pub fn ridge(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    penalty: &RidgePenalty,
) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("ridge: lambda must be finite and >= 0, got {lambda}")));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::dim(format!(
            "ridge: x has {} rows but y has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let p = x.ncols();
    if let RidgePenalty::Diagonal(g) = penalty {
        if g.len() != p {
            return Err(Error::dim(format!("ridge: penalty has {} entries, expected {p}", g.len())));
        }
    }
    let mut gram = x.transpose() * x;
    if lambda > 0.0 {
        for j in 0..p {
            let g2 = match penalty {
                RidgePenalty::Identity => 1.0,
                RidgePenalty::Diagonal(g) => g[j] * g[j],
            };
            gram[(j, j)] += lambda * g2;
        }
        if let Some(chol) = gram.clone().cholesky() {
            return Ok(chol.solve(&(x.transpose() * y)));
        }
    }
    let fit = ols(x, y)?;
    if fit.rank < p {
        log::warn!("ridge: singular system (rank {} < {p}), using pseudo-inverse", fit.rank);
    }
    Ok(fit.coefficients)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct EigenSpectrum {
    pub eigenvalues: DVector<f64>,
    /// Column `j` is the eigenvector of `eigenvalues[j]`.
    pub eigenvectors: DMatrix<f64>,
}

/// Symmetric eigen-decomposition. The input is symmetrised first; each
/// eigenvector's largest-magnitude entry is made positive.
pub fn sym_eigen(v: &DMatrix<f64>) -> Result<EigenSpectrum> {
    let (n, m) = v.shape();
    if n != m {
        return Err(Error::dim(format!("sym_eigen: matrix is {n}x{m}")));
    }
    if n == 0 {
        return Err(Error::dim("sym_eigen of an empty matrix"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("sym_eigen input contains non-finite entries"));
    }
    let sym = (v + v.transpose()) * 0.5;
    let dec = SymmetricEigen::try_new(sym, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::numerical("symmetric eigen-decomposition did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| dec.eigenvalues[j].total_cmp(&dec.eigenvalues[i]));
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col: Vec<f64> = dec.eigenvectors.column(src).iter().copied().collect();
        let sign = sign_of_largest(&col);
        values[dst] = dec.eigenvalues[src];
        for i in 0..n {
            vectors[(i, dst)] = sign * col[i];
        }
    }
    Ok(EigenSpectrum {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

pub fn center_columns(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Orthonormal basis for the row space of `b` (columns of the result).
pub fn row_space_basis(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dec = svd(&b.transpose())?;
    let r = dec.rank();
    Ok(dec.left.columns(0, r).into_owned())
}

/// Principal angles (radians, ascending) between the row spaces of `a` and `b`.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::dim(format!(
            "principal angles: {} vs {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let qa = row_space_basis(a)?;
    let qb = row_space_basis(b)?;
    if qa.ncols() == 0 || qb.ncols() == 0 {
        return Err(Error::invalid("principal angles of a zero matrix"));
    }
    let cos = svd(&(qa.transpose() * qb))?;
    Ok(cos
        .singular_values
        .iter()
        .map(|c| c.clamp(-1.0, 1.0).acos())
        .collect())
}
