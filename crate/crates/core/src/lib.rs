//! Deep-learning partial least squares.
//!
//! A PLS encoder reduces the inputs to a few latent scores, an inner model
//! (linear, neural network, Gaussian process or tree) maps X-scores to
//! Y-scores, and the Y-loadings decode back to outputs. Alongside sit the
//! shrinkage analysis of PLS/PCR/ridge/dropout, the single-index
//! (Brillinger) estimator, a Bayesian last layer, plotting data and
//! simulation generators.

pub mod bayes;
pub mod brillinger;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod inner;
pub mod io;
pub mod linalg;
pub mod pls;
pub mod shrinkage;
pub mod simulation;

pub use error::{Error, Result};
