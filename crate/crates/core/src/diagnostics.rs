//! Tabular diagnostics: scree values, biplot coordinates, correlation
//! circle, scale-factor curves and link-recovery scatter. Every table has a
//! row type that round-trips through CSV.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::brillinger::SingleIndexFit;
use crate::dataset::{standardize, StandardizedMatrix};
use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::pls::{scree_values, PlsModel};
use crate::shrinkage::{normalize_overall_shrinkage, Method, ShrinkageReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeRow {
    pub component: usize,
    pub singular_value: f64,
    /// Cumulative share of the sum of squared singular values.
    pub cumulative_share: f64,
}

pub fn scree(x: &StandardizedMatrix, y: &StandardizedMatrix) -> Result<Vec<ScreeRow>> {
    let s = scree_values(x, y)?;
    let total: f64 = s.iter().map(|v| v * v).sum();
    let mut acc = 0.0;
    Ok(s.iter()
        .enumerate()
        .map(|(k, &v)| {
            acc += v * v;
            ScreeRow {
                component: k + 1,
                singular_value: v,
                cumulative_share: if total > 0.0 { acc / total } else { 0.0 },
            }
        })
        .collect())
}

/// How the singular values are split between the two coordinate sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiplotScaling {
    /// Samples `U S`, variables `V`: sample distances are preserved.
    #[default]
    Form,
    /// Samples `U`, variables `V S`: variable lengths reflect variance.
    Covariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiplotData {
    /// n × 2.
    pub sample_coords: DMatrix<f64>,
    /// p × 2.
    pub variable_coords: DMatrix<f64>,
    pub scaling: BiplotScaling,
    pub singular_values: [f64; 2],
}

impl BiplotData {
    /// `sample_coords · variable_coordsᵀ`, the rank-2 approximation of the
    /// centred data.
    pub fn reconstruction(&self) -> DMatrix<f64> {
        &self.sample_coords * self.variable_coords.transpose()
    }

    pub fn rows(&self, variable_names: &[String]) -> Result<Vec<BiplotRow>> {
        let p = self.variable_coords.nrows();
        let names = labels(variable_names, p, "x")?;
        let samples = self.sample_coords.row_iter().enumerate().map(|(i, r)| BiplotRow {
            kind: PointKind::Sample,
            label: (i + 1).to_string(),
            dim1: r[0],
            dim2: r[1],
        });
        let variables = self.variable_coords.row_iter().zip(names).map(|(r, name)| BiplotRow {
            kind: PointKind::Variable,
            label: name,
            dim1: r[0],
            dim2: r[1],
        });
        Ok(samples.chain(variables).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Sample,
    Variable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiplotRow {
    pub kind: PointKind,
    pub label: String,
    pub dim1: f64,
    pub dim2: f64,
}

fn labels(names: &[String], width: usize, prefix: &str) -> Result<Vec<String>> {
    if names.is_empty() {
        return Ok((1..=width).map(|j| format!("{prefix}{j}")).collect());
    }
    if names.len() != width {
        return Err(Error::dim(format!("{} names for {width} variables", names.len())));
    }
    Ok(names.to_vec())
}

pub fn biplot(x: &StandardizedMatrix, scaling: BiplotScaling) -> Result<BiplotData> {
    let dec = svd(&x.values)?;
    if dec.rank() < 2 {
        return Err(Error::invalid(format!("biplot needs rank at least 2, data has rank {}", dec.rank())));
    }
    let u = dec.left.columns(0, 2);
    let v = dec.right.columns(0, 2);
    let s = DMatrix::from_diagonal(&dec.singular_values.rows(0, 2).into_owned());
    let (sample_coords, variable_coords) = match scaling {
        BiplotScaling::Form => (u * &s, v.into_owned()),
        BiplotScaling::Covariance => (u.into_owned(), v * &s),
    };
    Ok(BiplotData {
        sample_coords,
        variable_coords,
        scaling,
        singular_values: [dec.singular_values[0], dec.singular_values[1]],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleRow {
    pub block: Block,
    pub variable: String,
    pub corr_t1: f64,
    pub corr_t2: f64,
    /// Set when the variable (or a score) has no spread; both correlations
    /// are then reported as 0.
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCircleData {
    pub rows: Vec<CircleRow>,
}

impl CorrelationCircleData {
    /// Largest `r₁² + r₂²` over all variables.
    pub fn max_radius_squared(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.corr_t1 * r.corr_t1 + r.corr_t2 * r.corr_t2)
            .fold(0.0, f64::max)
    }
}

fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let scale_a = saa.sqrt();
    let scale_b = sbb.sqrt();
    // relative spread test so that columns equal up to rounding count as constant
    let spread = |s: f64, m: f64| s > 1e-12 * (m.abs() * n.sqrt()).max(f64::MIN_POSITIVE);
    if !spread(scale_a, ma) || !spread(scale_b, mb) {
        return None;
    }
    Some((sab / (scale_a * scale_b)).clamp(-1.0, 1.0))
}

/// Pearson correlations of every raw X and Y variable with the first two
/// X-scores of `pls` evaluated on `x`.
pub fn correlation_circle(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    pls: &PlsModel,
    x_names: &[String],
    y_names: &[String],
) -> Result<CorrelationCircleData> {
    if pls.n_components < 2 {
        return Err(Error::invalid(format!(
            "correlation circle needs two components, model has {}",
            pls.n_components
        )));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::dim(format!("x has {} rows but y has {}", x.nrows(), y.nrows())));
    }
    if y.ncols() != pls.n_outputs() {
        return Err(Error::dim(format!("model has {} outputs, y has {}", pls.n_outputs(), y.ncols())));
    }
    let t = pls.scores(x)?;
    circle_from_scores(&t, x, y, x_names, y_names)
}

/// Correlation circle against explicit score columns `t₁, t₂`.
pub fn circle_from_scores(
    t: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    x_names: &[String],
    y_names: &[String],
) -> Result<CorrelationCircleData> {
    if t.ncols() < 2 || t.nrows() != x.nrows() || x.nrows() != y.nrows() {
        return Err(Error::dim(format!(
            "scores {:?} do not match blocks of {} and {} rows",
            t.shape(),
            x.nrows(),
            y.nrows()
        )));
    }
    let t1: Vec<f64> = t.column(0).iter().copied().collect();
    let t2: Vec<f64> = t.column(1).iter().copied().collect();
    let mut rows = Vec::with_capacity(x.ncols() + y.ncols());
    for (block, m, names) in [
        (Block::X, x, labels(x_names, x.ncols(), "x")?),
        (Block::Y, y, labels(y_names, y.ncols(), "y")?),
    ] {
        for (col, variable) in m.column_iter().zip(names) {
            let v: Vec<f64> = col.iter().copied().collect();
            let row = match (correlation(&v, &t1), correlation(&v, &t2)) {
                (Some(c1), Some(c2)) => CircleRow {
                    block,
                    variable,
                    corr_t1: c1,
                    corr_t2: c2,
                    constant: false,
                },
                _ => CircleRow {
                    block,
                    variable,
                    corr_t1: 0.0,
                    corr_t2: 0.0,
                    constant: true,
                },
            };
            rows.push(row);
        }
    }
    Ok(CorrelationCircleData { rows })
}

/// One `(method, direction)` scale factor for one output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactorRow {
    pub output: String,
    pub method: String,
    /// Component count for PLS and PCR, penalty for ridge.
    pub setting: f64,
    /// Label of the method whose coefficient norm this one was matched to,
    /// empty when the setting was given directly.
    pub matched_to: String,
    pub direction: usize,
    pub eigenvalue: f64,
    pub alpha_hat: f64,
    pub factor: f64,
    pub indeterminate: bool,
}

fn method_setting(m: &Method) -> f64 {
    match *m {
        Method::Ols => 0.0,
        Method::Ridge { lambda } => lambda,
        Method::Pcr { components } | Method::Pls { components } => components as f64,
    }
}

fn push_report(rows: &mut Vec<ScaleFactorRow>, report: &ShrinkageReport, output: &str, matched_to: &dyn Fn(&Method) -> String) {
    for m in &report.methods {
        for (j, &f) in m.factors.iter().enumerate() {
            rows.push(ScaleFactorRow {
                output: output.to_string(),
                method: m.method.label(),
                setting: method_setting(&m.method),
                matched_to: matched_to(&m.method),
                direction: j + 1,
                eigenvalue: report.eigenvalues[j],
                alpha_hat: report.alpha_hat[j],
                factor: f,
                indeterminate: m.indeterminate[j],
            });
        }
    }
}

/// Long-format scale factors for every output column: PLS at each
/// component count together with the ridge penalty and PCR component count
/// matched to its coefficient norm, then ridge at each listed penalty.
pub fn scale_factor_curves(
    x: &StandardizedMatrix,
    y: &DMatrix<f64>,
    pls_components: &[usize],
    ridge_lambdas: &[f64],
    output_names: &[String],
) -> Result<Vec<ScaleFactorRow>> {
    if y.nrows() != x.nrows() {
        return Err(Error::dim(format!("x has {} rows but y has {}", x.nrows(), y.nrows())));
    }
    let names = labels(output_names, y.ncols(), "y")?;
    let mut rows = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let yk = y.column(k).into_owned();
        for &l in pls_components {
            let reference = Method::Pls { components: l };
            let norm = normalize_overall_shrinkage(x, &yk, &reference)?;
            let mut methods = vec![reference];
            if norm.ridge_lambda.is_finite() {
                methods.push(Method::Ridge {
                    lambda: norm.ridge_lambda,
                });
            }
            methods.push(Method::Pcr {
                components: norm.pcr_components,
            });
            let report = ShrinkageReport::new(x, &yk, &methods)?;
            let tag = format!("pls:{l}");
            push_report(&mut rows, &report, name, &|m| match m {
                Method::Pls { .. } => String::new(),
                _ => tag.clone(),
            });
        }
        if !ridge_lambdas.is_empty() {
            let methods: Vec<Method> = ridge_lambdas.iter().map(|&lambda| Method::Ridge { lambda }).collect();
            let report = ShrinkageReport::new(x, &yk, &methods)?;
            push_report(&mut rows, &report, name, &|_| String::new());
        }
    }
    Ok(rows)
}

/// Convenience wrapper standardizing raw inputs first.
pub fn scale_factor_curves_raw(
    x_raw: &DMatrix<f64>,
    y: &DMatrix<f64>,
    pls_components: &[usize],
    ridge_lambdas: &[f64],
    output_names: &[String],
) -> Result<Vec<ScaleFactorRow>> {
    scale_factor_curves(&standardize(x_raw), y, pls_components, ridge_lambdas, output_names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkSeries {
    Observed,
    Estimated,
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkRow {
    pub series: LinkSeries,
    pub index: f64,
    pub value: f64,
}

/// Training scatter, estimated link on its grid, and optionally the true
/// link (as a function of the estimated index) on the same grid.
pub fn link_recovery(fit: &SingleIndexFit, truth: Option<&dyn Fn(f64) -> f64>) -> Vec<LinkRow> {
    let mut rows: Vec<LinkRow> = fit
        .scatter()
        .map(|(index, value)| LinkRow {
            series: LinkSeries::Observed,
            index,
            value,
        })
        .collect();
    rows.extend(fit.link.grid.iter().zip(&fit.link.values).map(|(&index, &value)| LinkRow {
        series: LinkSeries::Estimated,
        index,
        value,
    }));
    if let Some(g) = truth {
        rows.extend(fit.link.grid.iter().map(|&index| LinkRow {
            series: LinkSeries::True,
            index,
            value: g(index),
        }));
    }
    rows
}

/// Largest gap between the estimated link and `truth` over the grid points
/// lying between the lower and upper `(1 − central)/2` quantiles of the
/// observed index.
pub fn link_sup_error(fit: &SingleIndexFit, truth: &dyn Fn(f64) -> f64, central: f64) -> Result<f64> {
    if !(central > 0.0 && central <= 1.0) {
        return Err(Error::invalid(format!("central fraction must lie in (0, 1], got {central}")));
    }
    let mut index = fit.smoother.index.clone();
    index.sort_by(f64::total_cmp);
    let tail = (1.0 - central) / 2.0;
    let lo = quantile(&index, tail);
    let hi = quantile(&index, 1.0 - tail);
    let gaps: Vec<f64> = fit
        .link
        .grid
        .iter()
        .zip(&fit.link.values)
        .filter(|(u, _)| **u >= lo && **u <= hi)
        .map(|(&u, &v)| (v - truth(u)).abs())
        .collect();
    if gaps.is_empty() {
        return Err(Error::invalid("no grid points inside the central range"));
    }
    Ok(gaps.into_iter().fold(0.0, f64::max))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    }
}

/// `(β̂_j, β_j)` pairs for the estimated-vs-true coefficient scatter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub coefficient: usize,
    pub estimated: f64,
    pub truth: f64,
}

pub fn coefficient_scatter(estimated: &DVector<f64>, truth: &DVector<f64>) -> Result<Vec<CoefficientRow>> {
    if estimated.len() != truth.len() {
        return Err(Error::dim(format!("{} estimates for {} true values", estimated.len(), truth.len())));
    }
    Ok(estimated
        .iter()
        .zip(truth.iter())
        .enumerate()
        .map(|(j, (&e, &t))| CoefficientRow {
            coefficient: j + 1,
            estimated: e,
            truth: t,
        })
        .collect())
}
