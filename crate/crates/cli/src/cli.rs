use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "dlpls", version, about = "Deep-learning partial least squares")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    #[serde(skip)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Expand, standardize, fit PLS and an inner model; write the model file.
    Fit(FitArgs),
    /// Score new rows with a saved model.
    Predict(PredictArgs),
    /// Write a diagnostic table.
    Diagnose(DiagnoseArgs),
    /// Generate a synthetic data set.
    Simulate(SimulateArgs),
    /// Rerun one of the bundled experiments.
    Reproduce(ReproduceArgs),
    /// Posterior predictive mean and variance from a saved model.
    BayesPredict(BayesPredictArgs),
    /// Replay the command recorded in a manifest into a new directory.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Delimited numeric table with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Output column name; repeat for several. Defaults to the last column.
    #[arg(long = "target")]
    pub targets: Vec<String>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Column transforms as `name=log1p,name=sqrt`, or `wine` for the
    /// white-wine defaults.
    #[arg(long)]
    pub transforms: Option<String>,
    /// Add squares and pairwise products of the inputs.
    #[arg(long)]
    pub expand: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerKind {
    Linear,
    Mlp,
    Autoencoder,
    Gp,
    Tree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationArg {
    Relu,
    Tanh,
    Identity,
}

#[derive(Debug, Args, Serialize)]
pub struct InnerArgs {
    #[arg(long, value_enum, default_value_t = InnerKind::Linear)]
    pub inner: InnerKind,
    /// Hidden widths of the network inner model, comma separated.
    #[arg(long, default_value = "16", value_delimiter = ',')]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ActivationArg::Relu)]
    pub activation: ActivationArg,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Autoencoder bottleneck width.
    #[arg(long, default_value_t = 1)]
    pub bottleneck: usize,
    /// Tree penalty weights and size limits.
    #[arg(long, default_value_t = 0.5)]
    pub tree_a: f64,
    #[arg(long, default_value_t = 0.1)]
    pub tree_b: f64,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 4)]
    pub max_depth: usize,
    /// GP noise variance on the standardized score scale.
    #[arg(long, default_value_t = 1e-2)]
    pub gp_noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gp_length_scale: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of PLS components; chosen by cross-validation when omitted.
    #[arg(long)]
    pub components: Option<usize>,
    /// Largest component count tried by cross-validation.
    #[arg(long, default_value_t = 10)]
    pub max_components: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub inner: InnerArgs,
    /// Prior variance of the Bayesian last layer stored with the model.
    #[arg(long, default_value_t = dlpls::bayes::DEFAULT_PRIOR_VARIANCE)]
    pub prior_variance: f64,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Also write the posterior predictive mean and variance.
    #[arg(long)]
    pub bayes: bool,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args, Serialize)]
pub struct BayesPredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Artifact {
    Scree,
    Biplot,
    CorrCircle,
    Shrinkage,
    LinkRecovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingArg {
    Form,
    Covariance,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long, value_enum)]
    pub artifact: Artifact,
    #[command(flatten)]
    pub data: DataArgs,
    /// PLS components for the correlation circle (at least 2) or the
    /// largest count for the shrinkage curves.
    #[arg(long)]
    pub components: Option<usize>,
    /// Ridge penalties for the shrinkage curves, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1,1,10,100")]
    pub lambdas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ScalingArg::Form)]
    pub scaling: ScalingArg,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioArg {
    ReluIndex,
    TanhIndex,
    LogAbs,
    TwoOutput,
    DeepRelu,
    Collinear,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioArg,
    #[arg(long, default_value_t = dlpls::simulation::DEFAULT_SAMPLES)]
    pub n: usize,
    /// Number of inputs for the index and deep scenarios.
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    /// Hidden width and depth of the deep scenario.
    #[arg(long, default_value_t = 3)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise_sd: f64,
    /// Drop all noise.
    #[arg(long)]
    pub noiseless: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ReluTanh,
    IndependentSim,
    Wine,
}

#[derive(Debug, Args, Serialize)]
pub struct ReproduceArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    /// White-wine file (`;`-separated, UCI layout) for the wine experiment.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Overrides the experiment's default seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Skip the network parts of independent-sim and wine.
    #[arg(long)]
    pub no_network: bool,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args, Serialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}
