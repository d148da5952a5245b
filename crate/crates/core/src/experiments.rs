//! End-to-end reproductions of the simulated and wine experiments. Each
//! returns a serializable report with the tables it produced and a list of
//! tolerance checks.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brillinger::{
    fit_deep_relu_recursive, fit_single_index, proportionality_report, stein_k, Bandwidth, GaussianInputs,
    ProportionalityReport, SteinEstimate,
};
use crate::dataset::{
    apply_transforms, expand_features, load_csv, select_rows, standardize, ColumnSelector, CsvOptions, ExpansionSpec,
    TransformSpec,
};
use crate::diagnostics::{coefficient_scatter, link_recovery, link_sup_error, CoefficientRow, LinkRow};
use crate::error::{Error, Result};
use crate::inner::{fit_inner, predict_pipeline, Activation, InnerModel, InnerSpec, MlpConfig};
use crate::linalg::ols_with_intercept;
use crate::pls::{select_components_cv, CvCurve, PlsConfig, PlsModel};
use crate::shrinkage::{method_coefficients, Method};
use crate::simulation::{generate, SimSpec, DEFAULT_SAMPLES, INDEX_INTERCEPT};

/// One tolerance check of a reproduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub bound: String,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, observed: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            observed,
            bound: format!("<= {limit}"),
            passed: observed <= limit,
        }
    }

    pub fn at_least(name: &str, observed: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            observed,
            bound: format!(">= {limit}"),
            passed: observed >= limit,
        }
    }

    pub fn within(name: &str, observed: f64, target: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            observed,
            bound: format!("{target} +/- {tol}"),
            passed: (observed - target).abs() <= tol,
        }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

// ---------------------------------------------------------------------------
// independent predictors

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentSimConfig {
    pub n: usize,
    pub seed: u64,
    pub components: usize,
    pub folds: usize,
    /// Inner network compared against the linear inner model on held-out
    /// rows; `None` skips the comparison.
    pub mlp: Option<MlpConfig>,
    pub test_rows: usize,
}

impl Default for IndependentSimConfig {
    fn default() -> Self {
        IndependentSimConfig {
            n: DEFAULT_SAMPLES,
            seed: 42,
            components: 2,
            folds: 5,
            mlp: Some(MlpConfig {
                hidden: vec![16],
                activation: Activation::Tanh,
                learning_rate: 0.05,
                epochs: 200,
                batch_size: 32,
                seed: 7,
                init_scale: 1.0,
            }),
            test_rows: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTableRow {
    pub input: usize,
    pub y1: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentSimReport {
    pub config: IndependentSimConfig,
    pub coefficients: Vec<CoefficientTableRow>,
    pub y1_max_error: f64,
    pub y2_proportionality: ProportionalityReport,
    pub cv: CvCurve,
    pub noise_projection: Option<String>,
    /// Held-out MSE of the linear and network inner models, all outputs.
    pub linear_test_mse: Option<f64>,
    pub mlp_test_mse: Option<f64>,
    pub checks: Vec<Check>,
}

pub fn independent_sim(cfg: &IndependentSimConfig) -> Result<IndependentSimReport> {
    let data = generate(&SimSpec::two_output(cfg.n, cfg.seed))?;
    let pls = PlsModel::fit(&data.x, &data.y, &PlsConfig::new(cfg.components))?;
    let raw = pls.coefficients().raw;
    let coefficients = (0..raw.nrows())
        .map(|j| CoefficientTableRow {
            input: j + 1,
            y1: raw[(j, 0)],
            y2: raw[(j, 1)],
        })
        .collect();
    let b1 = data.truth.input_layer().row(0).transpose();
    let b2 = data.truth.input_layer().rows(1, 1).into_owned();
    let y1_max_error = (raw.column(0) - b1).amax();
    let y2_proportionality = proportionality_report(&DMatrix::from_row_slice(1, raw.nrows(), raw.column(1).as_slice()), &b2)?;
    let cv = select_components_cv(&data.x, &data.y, cfg.folds, data.x.ncols(), cfg.seed)?;

    let (mut linear_test_mse, mut mlp_test_mse) = (None, None);
    if let Some(mlp) = &cfg.mlp {
        let test = generate(&SimSpec::two_output(cfg.test_rows, cfg.seed.wrapping_add(1)))?;
        let mse = |inner: &InnerModel| -> Result<f64> {
            let pred = predict_pipeline(&pls, inner, &test.x)?;
            Ok((pred - &test.y).norm_squared() / test.y.len() as f64)
        };
        linear_test_mse = Some(mse(&InnerModel::linear(&pls))?);
        mlp_test_mse = Some(mse(&fit_inner(&pls, &InnerSpec::Mlp(mlp.clone()))?)?);
    }

    let mut checks = vec![
        Check::at_most("y1 coefficients max error vs (0,0,2,2)", y1_max_error, 0.1),
        Check::at_least("y2 through-origin R^2 vs (1,2,0,0)", y2_proportionality.r_squared[0], 0.95),
    ];
    if let (Some(lin), Some(net)) = (linear_test_mse, mlp_test_mse) {
        checks.push(Check {
            name: "network inner test MSE below linear".into(),
            observed: net,
            bound: format!("< {lin}"),
            passed: net < lin,
        });
    }
    Ok(IndependentSimReport {
        config: cfg.clone(),
        coefficients,
        y1_max_error,
        y2_proportionality,
        cv,
        noise_projection: data.truth.projection_note,
        linear_test_mse,
        mlp_test_mse,
        checks,
    })
}

// ---------------------------------------------------------------------------
// single-index recovery

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecoveryConfig {
    pub small_n: usize,
    pub p: usize,
    pub replicates: usize,
    pub large_n: usize,
    pub stein_draws: usize,
    pub central_fraction: f64,
    pub seed: u64,
}

impl Default for IndexRecoveryConfig {
    fn default() -> Self {
        IndexRecoveryConfig {
            small_n: 50,
            p: 20,
            replicates: 20,
            large_n: 500,
            stein_draws: crate::brillinger::STEIN_DEFAULT_DRAWS,
            central_fraction: 0.8,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecovery {
    pub activation: String,
    pub correlations: Vec<f64>,
    pub median_correlation: f64,
    pub stein: SteinEstimate,
    pub proportionality: ProportionalityReport,
    pub link_sup_error: f64,
    pub link: Vec<LinkRow>,
    pub coefficients: Vec<CoefficientRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecoveryReport {
    pub config: IndexRecoveryConfig,
    pub runs: Vec<ActivationRecovery>,
    pub checks: Vec<Check>,
}

fn recovery_for(cfg: &IndexRecoveryConfig, tanh: bool) -> Result<ActivationRecovery> {
    let spec = |n: usize, seed: u64| {
        if tanh {
            SimSpec::tanh_index(n, cfg.p, seed)
        } else {
            SimSpec::relu_index(n, cfg.p, seed)
        }
    };
    let g = move |s: f64| if tanh { s.tanh() } else { s.max(0.0) };
    let mut correlations = Vec::with_capacity(cfg.replicates);
    for r in 0..cfg.replicates {
        let data = generate(&spec(cfg.small_n, cfg.seed + r as u64))?;
        let y = data.y.column(0).into_owned();
        let fit = fit_single_index(&data.x, &y, Bandwidth::PlugIn)?;
        let report = proportionality_report(
            &DMatrix::from_row_slice(1, cfg.p, &fit.beta_hat),
            data.truth.input_layer(),
        )?;
        correlations.push(report.correlations[0]);
    }

    let data = generate(&spec(cfg.large_n, cfg.seed + 1000))?;
    let beta = data.truth.input_layer().row(0).transpose();
    let y = data.y.column(0).into_owned();
    let fit = fit_single_index(&data.x, &y, Bandwidth::PlugIn)?;
    let stein = stein_k(&beta, INDEX_INTERCEPT, g, &GaussianInputs::standard(cfg.p), cfg.stein_draws, cfg.seed)?;
    let k = stein.k;
    let truth = move |u: f64| g(INDEX_INTERCEPT + u / k);
    let proportionality = proportionality_report(&DMatrix::from_row_slice(1, cfg.p, &fit.beta_hat), data.truth.input_layer())?;
    Ok(ActivationRecovery {
        activation: if tanh { "tanh" } else { "relu" }.into(),
        median_correlation: median(&correlations),
        correlations,
        stein,
        proportionality,
        link_sup_error: link_sup_error(&fit, &truth, cfg.central_fraction)?,
        link: link_recovery(&fit, Some(&truth)),
        coefficients: coefficient_scatter(&DVector::from_column_slice(&fit.beta_hat), &beta)?,
    })
}

pub fn index_recovery(cfg: &IndexRecoveryConfig) -> Result<IndexRecoveryReport> {
    let runs = vec![recovery_for(cfg, false)?, recovery_for(cfg, true)?];
    let mut checks = Vec::new();
    for run in &runs {
        checks.push(Check::at_least(
            &format!("{} median corr(beta_hat, beta)", run.activation),
            run.median_correlation,
            0.9,
        ));
        checks.push(Check::at_most(
            &format!("{} link sup-norm error on central range", run.activation),
            run.link_sup_error,
            0.15,
        ));
    }
    Ok(IndexRecoveryReport {
        config: cfg.clone(),
        runs,
        checks,
    })
}

// ---------------------------------------------------------------------------
// recursive OLS on a deep ReLU ground truth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepRecoveryConfig {
    pub n: usize,
    pub p: usize,
    pub width: usize,
    pub depth: usize,
    pub noise_sd: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for DeepRecoveryConfig {
    fn default() -> Self {
        DeepRecoveryConfig {
            n: 5000,
            p: 6,
            width: 3,
            depth: 2,
            noise_sd: 0.1,
            replicates: 10,
            seed: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepRecoveryReport {
    pub config: DeepRecoveryConfig,
    /// Largest principal angle (degrees) between the estimated and true
    /// input-layer row spaces, per replicate.
    pub max_angles: Vec<f64>,
    pub median_max_angle: f64,
    pub checks: Vec<Check>,
}

pub fn deep_recovery(cfg: &DeepRecoveryConfig) -> Result<DeepRecoveryReport> {
    let hidden = vec![cfg.width; cfg.depth - 1];
    let mut max_angles = Vec::with_capacity(cfg.replicates);
    for r in 0..cfg.replicates {
        let data = generate(&SimSpec::deep_relu(cfg.n, cfg.p, cfg.width, cfg.depth, cfg.noise_sd, cfg.seed + r as u64))?;
        let fit = fit_deep_relu_recursive(&data.x, &data.y, &hidden)?;
        let report = proportionality_report(fit.input_layer(), data.truth.input_layer())?;
        max_angles.push(report.max_angle());
    }
    let median_max_angle = median(&max_angles);
    Ok(DeepRecoveryReport {
        config: cfg.clone(),
        checks: vec![Check::at_most("median input-layer principal angle (deg)", median_max_angle, 10.0)],
        max_angles,
        median_max_angle,
    })
}

// ---------------------------------------------------------------------------
// wine quality

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WineConfig {
    pub transforms: TransformSpec,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub pcr_components: (usize, usize),
    pub pls_components: (usize, usize),
    /// Classification network on the expanded inputs, followed by the
    /// single-index substitution of its output layer.
    pub network: Option<MlpConfig>,
}

impl Default for WineConfig {
    fn default() -> Self {
        WineConfig {
            transforms: TransformSpec::wine_default(),
            test_fraction: 0.2,
            split_seed: 2024,
            pcr_components: (5, 15),
            pls_components: (5, 10),
            network: Some(MlpConfig {
                hidden: vec![16, 32, 16],
                activation: Activation::Relu,
                learning_rate: 0.01,
                epochs: 60,
                batch_size: 32,
                seed: 11,
                init_scale: 1.0,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WineRow {
    pub model: String,
    pub inputs: usize,
    pub components: usize,
    pub adj_r_squared: f64,
    pub oos_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSubstitution {
    pub classes: Vec<i64>,
    pub network_accuracy: f64,
    pub substituted_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WineReport {
    pub config: WineConfig,
    pub n_rows: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rows: Vec<WineRow>,
    pub network: Option<NetworkSubstitution>,
    pub checks: Vec<Check>,
}

impl WineReport {
    pub fn row(&self, model: &str, inputs: usize) -> Option<&WineRow> {
        self.rows.iter().find(|r| r.model == model && r.inputs == inputs)
    }
}

/// `1 − (1 − R²)(n − 1)/(n − d − 1)` with `d` regressors.
pub fn adjusted_r_squared(y: &DVector<f64>, fitted: &DVector<f64>, d: usize) -> f64 {
    let n = y.len() as f64;
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res = (y - fitted).norm_squared();
    let r2 = 1.0 - ss_res / ss_tot;
    1.0 - (1.0 - r2) * (n - 1.0) / (n - d as f64 - 1.0)
}

/// Share of rows whose prediction rounds to the label.
pub fn rounded_accuracy(labels: &DVector<f64>, predictions: &DVector<f64>) -> f64 {
    let hits = labels.iter().zip(predictions.iter()).filter(|(l, p)| p.round() == l.round()).count();
    hits as f64 / labels.len() as f64
}

/// Stratified split: within each label, a seeded shuffle puts
/// `round(fraction · count)` rows in the test set. Returns `(train, test)`.
pub fn stratified_split(labels: &DVector<f64>, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction must lie in (0, 1), got {fraction}")));
    }
    let mut groups: Vec<(i64, Vec<usize>)> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        let key = l.round() as i64;
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, rows)) => rows.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    groups.sort_by_key(|(k, _)| *k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut rows) in groups {
        rows.shuffle(&mut rng);
        let k = (fraction * rows.len() as f64).round() as usize;
        test.extend_from_slice(&rows[..k]);
        train.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("split left an empty partition"));
    }
    Ok((train, test))
}

/// Fits one linear model on `(x_train, y_train)` and predicts `x_eval`.
fn linear_predictor(model: &str, components: usize, x_train: &DMatrix<f64>, y_train: &DVector<f64>, x_eval: &DMatrix<f64>) -> Result<DVector<f64>> {
    let y_mat = DMatrix::from_column_slice(y_train.len(), 1, y_train.as_slice());
    match model {
        "OLS" => {
            let (b0, fit) = ols_with_intercept(x_train, &y_mat)?;
            Ok((x_eval * fit.coefficients).column(0).add_scalar(b0[0]))
        }
        "PLS" => Ok(PlsModel::fit(x_train, &y_mat, &PlsConfig::new(components))?.predict(x_eval)?.column(0).into_owned()),
        "PCR" => {
            let xs = standardize(x_train);
            let beta = method_coefficients(&Method::Pcr { components }, &xs, y_train)?;
            let z = xs.params.apply(x_eval)?;
            Ok((z * beta).add_scalar(y_train.mean()))
        }
        other => Err(Error::invalid(format!("unknown model {other}"))),
    }
}

fn one_hot(labels: &DVector<f64>, classes: &[i64]) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), classes.len(), |i, c| {
        let l = (labels[i].round() as i64).clamp(classes[0], classes[classes.len() - 1]);
        if l == classes[c] { 1.0 } else { 0.0 }
    })
}

fn argmax_accuracy(scores: &DMatrix<f64>, labels: &DVector<f64>, classes: &[i64]) -> f64 {
    let hits = scores
        .row_iter()
        .zip(labels.iter())
        .filter(|(row, l)| {
            let best = row.iter().enumerate().fold(0, |b, (j, v)| if *v > row[b] { j } else { b });
            classes[best] == (l.round() as i64).clamp(classes[0], classes[classes.len() - 1])
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// Trains the classification network, then replaces its output layer by
/// one single-index regression per class on the last hidden features.
fn network_substitution(
    cfg: &MlpConfig,
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    x_test: &DMatrix<f64>,
    y_test: &DVector<f64>,
) -> Result<NetworkSubstitution> {
    // the top rating is rare, so it is pooled with the one below
    let lo = y_train.min().round() as i64;
    let hi = (y_train.max().round() as i64 - 1).max(lo + 1);
    let classes: Vec<i64> = (lo..=hi).collect();
    let xs = standardize(x_train);
    let z_test = xs.params.apply(x_test)?;
    let targets = one_hot(y_train, &classes);
    let net = crate::inner::fit_mlp(&xs.values, &targets, cfg)?;
    let network_accuracy = argmax_accuracy(&net.predict(&z_test)?, y_test, &classes);

    let features = net.hidden_outputs(&xs.values)?.pop().expect("network has hidden layers");
    let features_test = net.hidden_outputs(&z_test)?.pop().expect("network has hidden layers");
    let live: Vec<usize> = (0..features.ncols())
        .filter(|&j| {
            let c = features.column(j);
            c.max() - c.min() > 1e-12
        })
        .collect();
    let f_train = crate::dataset::select_columns(&features, &live);
    let f_test = crate::dataset::select_columns(&features_test, &live);
    let mut scores = DMatrix::zeros(x_test.nrows(), classes.len());
    for c in 0..classes.len() {
        let fit = fit_single_index(&f_train, &targets.column(c).into_owned(), Bandwidth::PlugIn)?;
        scores.set_column(c, &fit.predict(&f_test)?);
    }
    Ok(NetworkSubstitution {
        network_accuracy,
        substituted_accuracy: argmax_accuracy(&scores, y_test, &classes),
        classes,
    })
}

pub fn wine_from_table(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &WineConfig) -> Result<WineReport> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::invalid("no rows"));
    }
    let x77 = expand_features(x, &ExpansionSpec::full())?;
    let (train, test) = stratified_split(y, cfg.test_fraction, cfg.split_seed)?;
    let y_train = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
    let y_test = DVector::from_iterator(test.len(), test.iter().map(|&i| y[i]));
    let mut rows = Vec::new();
    for (block, pcr, pls) in [
        (x, cfg.pcr_components.0, cfg.pls_components.0),
        (&x77, cfg.pcr_components.1, cfg.pls_components.1),
    ] {
        let p = block.ncols();
        for (model, components) in [("OLS", p), ("PCR", pcr), ("PLS", pls)] {
            let fitted = linear_predictor(model, components, block, y, block)?;
            let x_train = select_rows(block, &train);
            let pred = linear_predictor(model, components, &x_train, &y_train, &select_rows(block, &test))?;
            rows.push(WineRow {
                model: model.into(),
                inputs: p,
                components,
                adj_r_squared: adjusted_r_squared(y, &fitted, components),
                oos_accuracy: rounded_accuracy(&y_test, &pred),
            });
        }
    }
    let network = match &cfg.network {
        Some(net) => Some(network_substitution(
            net,
            &select_rows(&x77, &train),
            &y_train,
            &select_rows(&x77, &test),
            &y_test,
        )?),
        None => None,
    };

    let w = x.ncols();
    let wide = x77.ncols();
    let mut checks = Vec::new();
    let published = [
        ("OLS", w, 0.347, 0.01, 0.59),
        ("OLS", wide, 0.403, 0.01, 0.575),
        ("PCR", w, 0.324, f64::NAN, 0.58),
        ("PCR", wide, 0.372, f64::NAN, 0.595),
        ("PLS", w, 0.347, f64::NAN, 0.595),
        ("PLS", wide, 0.389, 0.02, 0.6),
    ];
    for (model, inputs, adj, tol, acc) in published {
        let row = rows.iter().find(|r| r.model == model && r.inputs == inputs).expect("row computed above");
        if tol.is_finite() {
            checks.push(Check::within(&format!("{model} {inputs}-var adj R^2"), row.adj_r_squared, adj, tol));
        }
        checks.push(Check::within(&format!("{model} {inputs}-var OOS accuracy"), row.oos_accuracy, acc, 0.05));
    }
    if let Some(sub) = &network {
        checks.push(Check::within(
            "single-index substitution accuracy vs network",
            sub.substituted_accuracy,
            sub.network_accuracy,
            0.05,
        ));
    }
    Ok(WineReport {
        config: cfg.clone(),
        n_rows: n,
        n_train: train.len(),
        n_test: test.len(),
        rows,
        network,
        checks,
    })
}

/// Loads a UCI-format (`;`-separated, `quality` last) wine file and runs
/// [`wine_from_table`] on the transformed inputs.
pub fn wine(path: &Path, cfg: &WineConfig) -> Result<WineReport> {
    let table = load_csv(path, &[ColumnSelector::Name("quality".into())], CsvOptions::wine())?;
    let table = apply_transforms(&table, &cfg.transforms)?;
    let y = table.y_block().column(0).into_owned();
    wine_from_table(&table.x_block(), &y, cfg)
}
