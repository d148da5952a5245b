use std::collections::BTreeMap;
use std::path::Path;

use dlpls::bayes::{fit_last_layer, ConjugatePosterior};
use dlpls::brillinger::{fit_single_index, Bandwidth};
use dlpls::dataset::{
    apply_transforms, expand_features, load_csv, standardize, CsvOptions, ExpansionSpec, RawTable, TransformSpec,
};
use dlpls::diagnostics::{biplot, correlation_circle, link_recovery, scale_factor_curves_raw, scree, BiplotScaling};
use dlpls::experiments::{
    adjusted_r_squared, all_passed, independent_sim, index_recovery, wine, Check, IndependentSimConfig,
    IndexRecoveryConfig, WineConfig,
};
use dlpls::inner::{
    fit_inner, predict_pipeline, Activation, GpConfig, InnerSpec, MlpConfig, ModelDocument, TreeConfig,
};
use dlpls::pls::{select_components_cv, CvCurve, PlsConfig, PlsModel};
use dlpls::simulation::{collinear_design, generate, SimSpec};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cli::*;
use crate::error::CliError;
use crate::output::{Manifest, OutputDir};

type Result<T> = std::result::Result<T, CliError>;

/// Model file: the fitted pipeline plus the preprocessing needed to score
/// raw rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub raw_input_names: Vec<String>,
    pub transforms: TransformSpec,
    pub expansion: Option<ExpansionSpec>,
    pub document: ModelDocument,
    /// Conjugate posterior of each output's last-layer weights, on the
    /// standardized output scale.
    pub last_layer: Option<Vec<ConjugatePosterior>>,
}

impl SavedModel {
    fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a model file: {e}", path.display())))
    }

    /// Raw rows to model inputs: column matching, transforms, expansion.
    fn prepare(&self, table: &RawTable) -> Result<DMatrix<f64>> {
        let p = self.raw_input_names.len();
        let by_name: Option<Vec<usize>> = self.raw_input_names.iter().map(|n| table.column_index(n)).collect();
        let columns = match by_name {
            Some(c) => c,
            None if table.values.ncols() == p => (0..p).collect(),
            None => {
                return Err(CliError::Usage(format!(
                    "expected {p} input columns, found {}",
                    table.values.ncols()
                )))
            }
        };
        let values = DMatrix::from_fn(table.n_rows(), p, |i, j| table.values[(i, columns[j])]);
        let raw = RawTable::new(self.raw_input_names.clone(), values, Vec::new())?;
        let x = apply_transforms(&raw, &self.transforms)?.values;
        Ok(match &self.expansion {
            Some(spec) => expand_features(&x, spec)?,
            None => x,
        })
    }
}

fn csv_options(delimiter: char) -> Result<CsvOptions> {
    if !delimiter.is_ascii() {
        return Err(CliError::Usage(format!("delimiter {delimiter:?} is not ASCII")));
    }
    Ok(CsvOptions {
        delimiter: delimiter as u8,
        ..Default::default()
    })
}

fn parse_transforms(spec: Option<&str>) -> Result<TransformSpec> {
    Ok(match spec {
        None => TransformSpec::default(),
        Some("wine") => TransformSpec::wine_default(),
        Some(s) => TransformSpec::parse(s)?,
    })
}

struct Prepared {
    raw_input_names: Vec<String>,
    transforms: TransformSpec,
    expansion: Option<ExpansionSpec>,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    x_names: Vec<String>,
    y_names: Vec<String>,
}

fn prepare_data(args: &DataArgs) -> Result<Prepared> {
    let mut table = load_csv(&args.input, &[], csv_options(args.delimiter)?)?;
    table.output_columns = if args.targets.is_empty() {
        vec![table.values.ncols() - 1]
    } else {
        args.targets
            .iter()
            .map(|t| table.column_index(t).ok_or_else(|| CliError::Usage(format!("no column named {t:?}"))))
            .collect::<Result<_>>()?
    };
    if table.input_columns().is_empty() {
        return Err(CliError::Usage("no input columns left after choosing targets".into()));
    }
    let raw_input_names = table.input_names();
    let transforms = parse_transforms(args.transforms.as_deref())?;
    let table = apply_transforms(&table, &transforms)?;
    let mut x = table.x_block();
    let mut x_names = table.input_names();
    let expansion = args.expand.then(ExpansionSpec::full);
    if let Some(spec) = &expansion {
        x = expand_features(&x, spec)?;
        x_names = spec.expanded_names(&x_names);
    }
    Ok(Prepared {
        raw_input_names,
        transforms,
        expansion,
        x,
        y: table.y_block(),
        x_names,
        y_names: table.output_names(),
    })
}

fn inner_spec(args: &InnerArgs, seed: u64) -> InnerSpec {
    let mlp = MlpConfig {
        hidden: args.hidden.clone(),
        activation: match args.activation {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::Identity => Activation::Identity,
        },
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed,
        init_scale: 1.0,
    };
    match args.inner {
        InnerKind::Linear => InnerSpec::Linear,
        InnerKind::Mlp => InnerSpec::Mlp(mlp),
        InnerKind::Autoencoder => InnerSpec::Autoencoder {
            config: mlp,
            bottleneck: args.bottleneck,
        },
        InnerKind::Gp => InnerSpec::Gp(GpConfig {
            lengthscale: args.gp_length_scale,
            noise_variance: args.gp_noise,
            ..Default::default()
        }),
        InnerKind::Tree => InnerSpec::Tree(TreeConfig {
            a: args.tree_a,
            b: args.tree_b,
            min_leaf: args.min_leaf,
            max_depth: args.max_depth,
        }),
    }
}

#[derive(Debug, Serialize)]
struct OutputMetric {
    output: String,
    mse: f64,
    r_squared: f64,
    adj_r_squared: f64,
}

#[derive(Debug, Serialize)]
struct CvRow {
    components: usize,
    mean_squared_error: f64,
}

#[derive(Debug, Serialize)]
struct CoefficientEntry {
    output: String,
    input: String,
    coefficient: f64,
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    n_rows: usize,
    n_inputs: usize,
    components: usize,
    selected_by: &'static str,
    inner: &'static str,
    input_names: &'a [String],
    output_names: &'a [String],
    metrics: &'a [OutputMetric],
    cv: Option<&'a CvCurve>,
    warnings: &'a [String],
}

fn output_metrics(y: &DMatrix<f64>, fitted: &DMatrix<f64>, d: usize, names: &[String]) -> Vec<OutputMetric> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let yk = y.column(k).into_owned();
            let fk = fitted.column(k).into_owned();
            let mean = yk.mean();
            let ss_res = (&yk - &fk).norm_squared();
            let ss_tot = yk.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            OutputMetric {
                output: name.clone(),
                mse: ss_res / yk.len() as f64,
                r_squared: 1.0 - ss_res / ss_tot,
                adj_r_squared: adjusted_r_squared(&yk, &fk, d),
            }
        })
        .collect()
}

pub fn fit(args: &FitArgs, out: &mut OutputDir) -> Result<()> {
    let data = prepare_data(&args.data)?;
    let p = data.x.ncols();
    let (components, cv) = match args.components {
        Some(l) => (l, None),
        None => {
            let l_max = args.max_components.min(p).min(data.x.nrows().saturating_sub(2).max(1));
            let cv = select_components_cv(&data.x, &data.y, args.folds, l_max, args.seed)?;
            log::info!("cross-validation chose {} components", cv.chosen);
            (cv.chosen, Some(cv))
        }
    };
    let pls = PlsModel::fit(&data.x, &data.y, &PlsConfig::new(components))?;
    let inner = fit_inner(&pls, &inner_spec(&args.inner, args.seed))?;
    let fitted = predict_pipeline(&pls, &inner, &data.x)?;

    let mut warnings = pls.warnings.clone();
    let features = inner.predict(&pls.x_scores)?;
    let y_std = pls.y_standardization.apply(&data.y)?;
    let last_layer = match fit_last_layer(&features, &y_std, args.prior_variance, None) {
        Ok(post) => Some(post),
        Err(e) => {
            warnings.push(format!("no Bayesian last layer: {e}"));
            None
        }
    };

    let metrics = output_metrics(&data.y, &fitted, components, &data.y_names);
    let coefficients = pls.coefficients();
    let mut coef_rows = Vec::new();
    for (k, output) in data.y_names.iter().enumerate() {
        coef_rows.push(CoefficientEntry {
            output: output.clone(),
            input: "(intercept)".into(),
            coefficient: coefficients.intercept[k],
        });
        for (j, input) in data.x_names.iter().enumerate() {
            coef_rows.push(CoefficientEntry {
                output: output.clone(),
                input: input.clone(),
                coefficient: coefficients.raw[(j, k)],
            });
        }
    }
    let kind = inner.kind();
    let model = SavedModel {
        raw_input_names: data.raw_input_names,
        transforms: data.transforms,
        expansion: data.expansion,
        document: ModelDocument::new(pls, inner, data.x_names.clone(), data.y_names.clone()),
        last_layer,
    };
    out.write_json("model.json", &model)?;
    out.write_json(
        "fit_report.json",
        &FitReport {
            n_rows: data.x.nrows(),
            n_inputs: p,
            components,
            selected_by: if cv.is_some() { "cross-validation" } else { "fixed" },
            inner: kind,
            input_names: &data.x_names,
            output_names: &data.y_names,
            metrics: &metrics,
            cv: cv.as_ref(),
            warnings: &warnings,
        },
    )?;
    out.write_table("metrics", &metrics)?;
    out.write_table("coefficients", &coef_rows)?;
    if let Some(cv) = &cv {
        let rows: Vec<CvRow> = cv
            .candidates
            .iter()
            .zip(&cv.mean_squared_error)
            .map(|(&components, &mean_squared_error)| CvRow {
                components,
                mean_squared_error,
            })
            .collect();
        out.write_table("cv", &rows)?;
    }
    out.write_matrix("fitted", &fitted, &data.y_names)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BayesRow {
    row: usize,
    output: String,
    mean: f64,
    variance: f64,
    q05: f64,
    q50: f64,
    q95: f64,
}

fn load_rows(path: &Path, delimiter: char) -> Result<RawTable> {
    Ok(load_csv(path, &[], csv_options(delimiter)?)?)
}

fn bayes_rows(model: &SavedModel, x: &DMatrix<f64>) -> Result<Vec<BayesRow>> {
    let posts = model
        .last_layer
        .as_ref()
        .ok_or_else(|| CliError::Usage("model has no Bayesian last layer".into()))?;
    let doc = &model.document;
    let features = doc.inner.predict(&doc.pls.scores(x)?)?;
    let ys = &doc.pls.y_standardization;
    let mut rows = Vec::with_capacity(features.nrows() * posts.len());
    for i in 0..features.nrows() {
        let u: DVector<f64> = features.row(i).transpose();
        for (k, post) in posts.iter().enumerate() {
            let d = post.predictive(&u)?;
            let (scale, mean) = (ys.scales[k], ys.means[k]);
            let d = dlpls::bayes::PredictiveDistribution {
                mean: d.mean * scale + mean,
                variance: d.variance * scale * scale,
            };
            let [q05, q50, q95] = d.quantiles();
            rows.push(BayesRow {
                row: i,
                output: doc.output_names[k].clone(),
                mean: d.mean,
                variance: d.variance,
                q05,
                q50,
                q95,
            });
        }
    }
    Ok(rows)
}

pub fn predict(args: &PredictArgs, out: &mut OutputDir) -> Result<()> {
    let model = SavedModel::read(&args.model)?;
    let x = model.prepare(&load_rows(&args.input, args.delimiter)?)?;
    let pred = model.document.predict(&x)?;
    out.write_matrix("predictions", &pred, &model.document.output_names)?;
    if args.bayes {
        out.write_table("predictive", &bayes_rows(&model, &x)?)?;
    }
    Ok(())
}

pub fn bayes_predict(args: &BayesPredictArgs, out: &mut OutputDir) -> Result<()> {
    let model = SavedModel::read(&args.model)?;
    let x = model.prepare(&load_rows(&args.input, args.delimiter)?)?;
    out.write_table("predictive", &bayes_rows(&model, &x)?)
}

pub fn diagnose(args: &DiagnoseArgs, out: &mut OutputDir) -> Result<()> {
    let data = prepare_data(&args.data)?;
    match args.artifact {
        Artifact::Scree => out.write_table("scree", &scree(&standardize(&data.x), &standardize(&data.y))?),
        Artifact::Biplot => {
            let scaling = match args.scaling {
                ScalingArg::Form => BiplotScaling::Form,
                ScalingArg::Covariance => BiplotScaling::Covariance,
            };
            let rows = biplot(&standardize(&data.x), scaling)?.rows(&data.x_names)?;
            out.write_table("biplot", &rows)
        }
        Artifact::CorrCircle => {
            let l = args.components.unwrap_or(2);
            let pls = PlsModel::fit(&data.x, &data.y, &PlsConfig::new(l))?;
            let circle = correlation_circle(&data.x, &data.y, &pls, &data.x_names, &data.y_names)?;
            out.write_table("corr_circle", &circle.rows)
        }
        Artifact::Shrinkage => {
            let top = args.components.unwrap_or(data.x.ncols()).min(data.x.ncols());
            let components: Vec<usize> = (1..=top).collect();
            let rows = scale_factor_curves_raw(&data.x, &data.y, &components, &args.lambdas, &data.y_names)?;
            out.write_table("scale_factors", &rows)
        }
        Artifact::LinkRecovery => {
            let y = data.y.column(0).into_owned();
            let fit = fit_single_index(&data.x, &y, Bandwidth::PlugIn)?;
            out.write_table("link", &link_recovery(&fit, None))?;
            let rows: Vec<CoefficientEntry> = data
                .x_names
                .iter()
                .zip(&fit.beta_hat)
                .map(|(input, &coefficient)| CoefficientEntry {
                    output: data.y_names[0].clone(),
                    input: input.clone(),
                    coefficient,
                })
                .collect();
            out.write_table("index_coefficients", &rows)
        }
    }
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn simulate(args: &SimulateArgs, out: &mut OutputDir) -> Result<()> {
    let spec = match args.scenario {
        ScenarioArg::ReluIndex => SimSpec::relu_index(args.n, args.p, args.seed),
        ScenarioArg::TanhIndex => SimSpec::tanh_index(args.n, args.p, args.seed),
        ScenarioArg::LogAbs => SimSpec::log_abs(args.n, args.seed),
        ScenarioArg::TwoOutput => SimSpec::two_output(args.n, args.seed),
        ScenarioArg::DeepRelu => SimSpec::deep_relu(args.n, args.p, args.width, args.depth, args.noise_sd, args.seed),
        ScenarioArg::Collinear => {
            let (x, y) = collinear_design(args.seed);
            let mut names = numbered("x", x.ncols());
            names.push("y".into());
            let mut table = x.clone().insert_column(x.ncols(), 0.0);
            table.set_column(x.ncols(), &y);
            return out.write_matrix("data", &table, &names);
        }
    };
    let spec = if args.noiseless { spec.noiseless() } else { spec };
    let data = generate(&spec)?;
    let (p, q) = (data.x.ncols(), data.y.ncols());
    let mut names = numbered("x", p);
    names.extend(numbered("y", q));
    let mut table = DMatrix::zeros(data.x.nrows(), p + q);
    table.columns_mut(0, p).copy_from(&data.x);
    table.columns_mut(p, q).copy_from(&data.y);
    out.write_matrix("data", &table, &names)?;
    out.write_matrix("truth_weights", data.truth.input_layer(), &numbered("x", p))?;
    out.write_json("truth.json", &data.truth)
}

fn report_checks(checks: &[Check]) {
    for c in checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        eprintln!("{status} {}: {} (target {})", c.name, c.observed, c.bound);
    }
    if !all_passed(checks) {
        log::warn!("some reproduction checks failed");
    }
}

pub fn reproduce(args: &ReproduceArgs, out: &mut OutputDir) -> Result<()> {
    match args.experiment {
        Experiment::IndependentSim => {
            let defaults = IndependentSimConfig::default();
            let cfg = IndependentSimConfig {
                seed: args.seed.unwrap_or(defaults.seed),
                folds: args.folds.unwrap_or(defaults.folds),
                mlp: if args.no_network { None } else { defaults.mlp.clone() },
                ..defaults
            };
            let report = independent_sim(&cfg)?;
            out.write_json("report.json", &report)?;
            out.write_table("coefficients", &report.coefficients)?;
            let cv: Vec<CvRow> = report
                .cv
                .candidates
                .iter()
                .zip(&report.cv.mean_squared_error)
                .map(|(&components, &mean_squared_error)| CvRow {
                    components,
                    mean_squared_error,
                })
                .collect();
            out.write_table("cv", &cv)?;
            out.write_table("checks", &report.checks)?;
            report_checks(&report.checks);
        }
        Experiment::ReluTanh => {
            let defaults = IndexRecoveryConfig::default();
            let cfg = IndexRecoveryConfig {
                seed: args.seed.unwrap_or(defaults.seed),
                ..defaults
            };
            let report = index_recovery(&cfg)?;
            out.write_json("report.json", &report)?;
            for run in &report.runs {
                out.write_table(&format!("link_{}", run.activation), &run.link)?;
                out.write_table(&format!("coefficients_{}", run.activation), &run.coefficients)?;
            }
            out.write_table("checks", &report.checks)?;
            report_checks(&report.checks);
        }
        Experiment::Wine => {
            let path = args.input.as_deref().ok_or_else(|| {
                CliError::Usage(
                    "the wine experiment needs --input pointing at winequality-white.csv; \
                     fetch it once with scripts/fetch_wine.sh"
                        .into(),
                )
            })?;
            if !path.is_file() {
                return Err(CliError::Usage(format!(
                    "wine data not found at {}; fetch it once with scripts/fetch_wine.sh",
                    path.display()
                )));
            }
            let defaults = WineConfig::default();
            let cfg = WineConfig {
                split_seed: args.seed.unwrap_or(defaults.split_seed),
                network: if args.no_network { None } else { defaults.network.clone() },
                ..defaults
            };
            let report = wine(path, &cfg)?;
            out.write_json("report.json", &report)?;
            out.write_table("table", &report.rows)?;
            out.write_table("checks", &report.checks)?;
            report_checks(&report.checks);
        }
    }
    Ok(())
}

/// Seeds named in a command, for the manifest.
pub fn seeds(command: &Command) -> BTreeMap<String, u64> {
    let mut s = BTreeMap::new();
    match command {
        Command::Fit(a) => {
            s.insert("cv_folds".into(), a.seed);
            s.insert("inner".into(), a.seed);
        }
        Command::Simulate(a) => {
            s.insert("simulation".into(), a.seed);
        }
        Command::Reproduce(a) => {
            let seed = match a.experiment {
                Experiment::IndependentSim => a.seed.unwrap_or(IndependentSimConfig::default().seed),
                Experiment::ReluTanh => a.seed.unwrap_or(IndexRecoveryConfig::default().seed),
                Experiment::Wine => a.seed.unwrap_or(WineConfig::default().split_seed),
            };
            s.insert("experiment".into(), seed);
        }
        _ => {}
    }
    s
}

/// Arguments of `manifest` with the output directory replaced.
pub fn replay_argv(manifest: &Manifest, output: &Path) -> Result<Vec<String>> {
    let mut argv = manifest.argv.clone();
    let out = output.to_string_lossy().into_owned();
    let mut replaced = false;
    let mut i = 0;
    while i < argv.len() {
        if argv[i] == "--output" && i + 1 < argv.len() {
            argv[i + 1] = out.clone();
            replaced = true;
            i += 1;
        } else if argv[i].starts_with("--output=") {
            argv[i] = format!("--output={out}");
            replaced = true;
        }
        i += 1;
    }
    if !replaced {
        return Err(CliError::Usage("manifest argv has no --output".into()));
    }
    if argv.first().map(String::as_str) == Some("rerun") {
        return Err(CliError::Usage("manifest records a rerun".into()));
    }
    Ok(argv)
}
