//! Models mapping X-scores to Y-scores, and the composed predictor
//! `Ŷ = destandardize(G(T*) Q)`.

pub mod gp;
pub mod mlp;
pub mod tree;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pls::{InnerCoefficients, PlsModel};

pub use gp::{fit_gp, fit_gp_scores, GpConfig, GpMean, GpPrediction, GpScoreModel};
pub use mlp::{fit_autoencoder, fit_mlp, Activation, Mlp, MlpConfig};
pub use tree::{fit_pls_tree, Node, PlsTree, TreeConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InnerModel {
    Linear { coefficients: InnerCoefficients },
    Mlp { network: Mlp },
    Gp { scores: Vec<GpScoreModel> },
    Tree { trees: Vec<PlsTree> },
}

impl InnerModel {
    /// The inner regression already estimated by the PLS fit.
    pub fn linear(pls: &PlsModel) -> Self {
        InnerModel::Linear {
            coefficients: pls.inner.clone(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            InnerModel::Linear { .. } => "linear",
            InnerModel::Mlp { .. } => "mlp",
            InnerModel::Gp { .. } => "gp",
            InnerModel::Tree { .. } => "tree",
        }
    }

    pub fn n_scores(&self) -> usize {
        match self {
            InnerModel::Linear { coefficients } => coefficients.as_matrix().nrows(),
            InnerModel::Mlp { network } => network.input_width(),
            InnerModel::Gp { scores } => scores.len(),
            InnerModel::Tree { trees } => trees.first().map_or(0, |t| t.n_inputs),
        }
    }

    /// `Û = G(T)`.
    pub fn predict(&self, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let l = self.n_scores();
        if t.ncols() != l {
            return Err(Error::dim(format!("inner model expects {l} scores, found {}", t.ncols())));
        }
        match self {
            InnerModel::Linear { coefficients } => Ok(t * coefficients.as_matrix()),
            InnerModel::Mlp { network } => network.predict(t),
            InnerModel::Gp { scores } => {
                let mut out = DMatrix::zeros(t.nrows(), l);
                for (k, gp) in scores.iter().enumerate() {
                    out.set_column(k, &gp.predict(&t.column(k).into_owned()).mean);
                }
                Ok(out)
            }
            InnerModel::Tree { trees } => {
                let mut out = DMatrix::zeros(t.nrows(), trees.len());
                for (k, tree) in trees.iter().enumerate() {
                    out.set_column(k, &tree.predict(t)?);
                }
                Ok(out)
            }
        }
    }
}

/// One tree per Y-score, each grown on all X-scores.
pub fn fit_tree_scores(t: &DMatrix<f64>, u: &DMatrix<f64>, cfg: &TreeConfig) -> Result<Vec<PlsTree>> {
    if t.nrows() != u.nrows() {
        return Err(Error::dim(format!("{} score rows but {} target rows", t.nrows(), u.nrows())));
    }
    (0..u.ncols())
        .map(|k| fit_pls_tree(t, &u.column(k).into_owned(), cfg))
        .collect()
}

/// Training configuration for each inner-model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InnerSpec {
    Linear,
    Mlp(MlpConfig),
    Autoencoder { config: MlpConfig, bottleneck: usize },
    Gp(GpConfig),
    Tree(TreeConfig),
}

/// Fits the inner model on the training scores of `pls`: inputs are the
/// X-scores, targets the least-squares Y-scores.
pub fn fit_inner(pls: &PlsModel, spec: &InnerSpec) -> Result<InnerModel> {
    let t = &pls.x_scores;
    let u = &pls.inner_targets;
    Ok(match spec {
        InnerSpec::Linear => InnerModel::linear(pls),
        InnerSpec::Mlp(cfg) => InnerModel::Mlp {
            network: fit_mlp(t, u, cfg)?,
        },
        InnerSpec::Autoencoder { config, bottleneck } => InnerModel::Mlp {
            network: fit_autoencoder(t, u, config, *bottleneck)?,
        },
        InnerSpec::Gp(cfg) => InnerModel::Gp {
            scores: fit_gp_scores(t, u, cfg)?,
        },
        InnerSpec::Tree(cfg) => InnerModel::Tree {
            trees: fit_tree_scores(t, u, cfg)?,
        },
    })
}

/// `T* = scores(x_new)`, `Û* = G(T*)`, `Ŷ* = destandardize(Û* Q)`.
pub fn predict_pipeline(pls: &PlsModel, inner: &InnerModel, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if inner.n_scores() != pls.n_components {
        return Err(Error::dim(format!(
            "inner model has {} scores but the PLS model has {} components",
            inner.n_scores(),
            pls.n_components
        )));
    }
    let t = pls.scores(x_new)?;
    let u = inner.predict(&t)?;
    pls.outputs_from_scores(&u)
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Serialized form of a fitted pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub pls: PlsModel,
    pub inner: InnerModel,
}

impl ModelDocument {
    pub fn new(pls: PlsModel, inner: InnerModel, input_names: Vec<String>, output_names: Vec<String>) -> Self {
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            input_names,
            output_names,
            pls,
            inner,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        Ok(doc)
    }

    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        predict_pipeline(&self.pls, &self.inner, x_new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pls::PlsConfig;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn linear_pipeline_matches_coefficients() {
        let x = gaussian(60, 5, 1);
        let y = gaussian(60, 2, 2) + &x.columns(0, 2) * 2.0;
        let pls = PlsModel::fit(&x, &y, &PlsConfig::new(3)).unwrap();
        let inner = fit_inner(&pls, &InnerSpec::Linear).unwrap();
        let x_new = gaussian(10, 5, 3);
        let a = predict_pipeline(&pls, &inner, &x_new).unwrap();
        let b = pls.coefficients().predict(&x_new).unwrap();
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn gp_pipeline_matches_stepwise_composition() {
        let x = gaussian(40, 3, 4);
        let y = x.column(0).map(|v| v.sin());
        let y = DMatrix::from_column_slice(40, 1, y.as_slice());
        let pls = PlsModel::fit(&x, &y, &PlsConfig::new(1)).unwrap();
        let cfg = GpConfig::default();
        let inner = fit_inner(&pls, &InnerSpec::Gp(cfg)).unwrap();
        let x_new = gaussian(5, 3, 5);
        let got = predict_pipeline(&pls, &inner, &x_new).unwrap();

        let z = pls.x_standardization.apply(&x_new).unwrap();
        let t = z * pls.projection.row(0).transpose();
        let gp = fit_gp(&pls.x_scores.column(0).into_owned(), &pls.inner_targets.column(0).into_owned(), &cfg).unwrap();
        let u: DVector<f64> = gp.predict(&t).mean;
        let q = pls.y_loadings[(0, 0)];
        let (m, s) = (pls.y_standardization.means[0], pls.y_standardization.scales[0]);
        for i in 0..5 {
            assert!((got[(i, 0)] - (u[i] * q * s + m)).abs() < 1e-12);
        }
    }

    #[test]
    fn document_round_trip_and_version_guard() {
        let x = gaussian(30, 3, 6);
        let y = gaussian(30, 1, 7);
        let pls = PlsModel::fit(&x, &y, &PlsConfig::new(2)).unwrap();
        let inner = fit_inner(&pls, &InnerSpec::Tree(TreeConfig::default())).unwrap();
        let doc = ModelDocument::new(pls, inner, vec!["a".into(), "b".into(), "c".into()], vec!["y".into()]);
        let json = doc.to_json().unwrap();
        let back = ModelDocument::from_json(&json).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.predict(&x).unwrap(), doc.predict(&x).unwrap());
        let bumped = json.replacen("\"format_version\": 1", "\"format_version\": 99", 1);
        assert!(ModelDocument::from_json(&bumped).is_err());
    }

    #[test]
    fn mismatched_inner_model_is_rejected() {
        let x = gaussian(30, 3, 8);
        let y = gaussian(30, 1, 9);
        let two = PlsModel::fit(&x, &y, &PlsConfig::new(2)).unwrap();
        let one = PlsModel::fit(&x, &y, &PlsConfig::new(1)).unwrap();
        let inner = fit_inner(&one, &InnerSpec::Linear).unwrap();
        assert!(predict_pipeline(&two, &inner, &x).is_err());
    }
}
