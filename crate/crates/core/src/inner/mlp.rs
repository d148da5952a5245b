//! Feed-forward networks trained by plain mini-batch SGD on squared error.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::select_rows;
use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative given the pre-activation `a` and output `z`.
    fn derivative(self, a: f64, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z * z,
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Multiplier on the default init bound `1/√fan_in`.
    pub init_scale: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![16],
            activation: Activation::Relu,
            learning_rate: 0.01,
            epochs: 500,
            batch_size: 32,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(Error::invalid("init scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// fan_in × fan_out.
    #[serde(with = "io::matrix")]
    pub weights: DMatrix<f64>,
    #[serde(with = "io::vector")]
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub config: MlpConfig,
    /// Training MSE before the first update.
    pub initial_loss: f64,
    /// Training MSE after each epoch.
    pub loss_trace: Vec<f64>,
}

fn add_bias(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut row in m.row_iter_mut() {
        row += b.transpose();
    }
}

impl Mlp {
    pub fn input_width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").weights.ncols()
    }

    /// Pre-activations and outputs of every layer; the last layer is linear.
    fn forward(&self, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut out = Vec::with_capacity(self.layers.len());
        let mut z = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut a = &z * &layer.weights;
            add_bias(&mut a, &layer.bias);
            z = if i == last { a.clone() } else { a.map(|v| self.activation.apply(v)) };
            pre.push(a);
            out.push(z.clone());
        }
        (pre, out)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_width() {
            return Err(Error::dim(format!(
                "network expects {} inputs, found {}",
                self.input_width(),
                x.ncols()
            )));
        }
        let (_, mut out) = self.forward(x);
        Ok(out.pop().expect("non-empty"))
    }

    /// Activated outputs of every hidden layer.
    pub fn hidden_outputs(&self, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        if x.ncols() != self.input_width() {
            return Err(Error::dim(format!(
                "network expects {} inputs, found {}",
                self.input_width(),
                x.ncols()
            )));
        }
        let (_, mut out) = self.forward(x);
        out.pop();
        Ok(out)
    }

    /// Training-style mean squared error over all entries.
    pub fn mean_squared_error(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
        let pred = self.predict(x)?;
        if pred.shape() != y.shape() {
            return Err(Error::dim(format!("targets are {:?}, predictions {:?}", y.shape(), pred.shape())));
        }
        Ok((pred - y).norm_squared() / y.len() as f64)
    }

    fn mse(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let (_, out) = self.forward(x);
        (out.last().expect("non-empty") - y).norm_squared() / y.len() as f64
    }

    fn sgd_step(&mut self, x: &DMatrix<f64>, y: &DMatrix<f64>, lr: f64) {
        let (pre, out) = self.forward(x);
        let last = self.layers.len() - 1;
        let mut delta = (&out[last] - y) * (2.0 / y.len() as f64);
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 { x } else { &out[i - 1] };
            let grad_w = input.transpose() * &delta;
            let grad_b = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            let next = if i > 0 {
                let back = &delta * self.layers[i].weights.transpose();
                let act = self.activation;
                Some(back.zip_zip_map(&pre[i - 1], &out[i - 1], |g, a, z| g * act.derivative(a, z)))
            } else {
                None
            };
            self.layers[i].weights -= grad_w * lr;
            self.layers[i].bias -= grad_b * lr;
            if let Some(d) = next {
                delta = d;
            }
        }
    }
}

fn check_training(t: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<()> {
    if t.nrows() != u.nrows() {
        return Err(Error::dim(format!("{} input rows but {} target rows", t.nrows(), u.nrows())));
    }
    if t.nrows() == 0 || t.ncols() == 0 || u.ncols() == 0 {
        return Err(Error::invalid("empty training data"));
    }
    if t.iter().chain(u.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains non-finite values"));
    }
    Ok(())
}

fn train(t: &DMatrix<f64>, u: &DMatrix<f64>, cfg: &MlpConfig) -> Result<Mlp> {
    cfg.validate()?;
    check_training(t, u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut widths = vec![t.ncols()];
    widths.extend(&cfg.hidden);
    widths.push(u.ncols());
    let layers = widths
        .windows(2)
        .map(|w| {
            let bound = cfg.init_scale / (w[0] as f64).sqrt();
            Layer {
                weights: DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-bound..bound)),
                bias: DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound)),
            }
        })
        .collect();
    let mut net = Mlp {
        layers,
        activation: cfg.activation,
        config: cfg.clone(),
        initial_loss: 0.0,
        loss_trace: Vec::with_capacity(cfg.epochs),
    };
    net.initial_loss = net.mse(t, u);
    let n = t.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = select_rows(t, batch);
            let yb = select_rows(u, batch);
            net.sgd_step(&xb, &yb, cfg.learning_rate);
        }
        let loss = net.mse(t, u);
        if !loss.is_finite() {
            return Err(Error::numerical(format!("training diverged at epoch {}", epoch + 1)));
        }
        net.loss_trace.push(loss);
    }
    Ok(net)
}

/// Network `L → hidden… → q` with the configured activation on hidden layers
/// and a linear output layer.
pub fn fit_mlp(t: &DMatrix<f64>, u: &DMatrix<f64>, cfg: &MlpConfig) -> Result<Mlp> {
    train(t, u, cfg)
}

/// Network `L → l₁ → q` with a single bottleneck layer narrower than the
/// input; `cfg.hidden` is ignored.
pub fn fit_autoencoder(t: &DMatrix<f64>, u: &DMatrix<f64>, cfg: &MlpConfig, bottleneck: usize) -> Result<Mlp> {
    if bottleneck == 0 || bottleneck >= t.ncols() {
        return Err(Error::invalid(format!(
            "bottleneck width {bottleneck} must lie in 1..{}",
            t.ncols()
        )));
    }
    let cfg = MlpConfig {
        hidden: vec![bottleneck],
        ..cfg.clone()
    };
    train(t, u, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identity_map_is_learned() {
        let t = gaussian(200, 2, 1);
        let cfg = MlpConfig {
            hidden: vec![8],
            activation: Activation::Tanh,
            learning_rate: 0.05,
            epochs: 600,
            batch_size: 16,
            seed: 3,
            init_scale: 1.0,
        };
        let net = fit_mlp(&t, &t, &cfg).unwrap();
        let last = *net.loss_trace.last().unwrap();
        assert!(last < 1e-3, "{last}");
        assert!(last <= net.initial_loss);
        assert!(net.loss_trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn epoch_bookkeeping() {
        let t = gaussian(20, 2, 2);
        let one = MlpConfig {
            epochs: 1,
            ..MlpConfig::default()
        };
        assert_eq!(fit_mlp(&t, &t, &one).unwrap().loss_trace.len(), 1);
        let zero = MlpConfig {
            epochs: 0,
            ..MlpConfig::default()
        };
        assert!(fit_mlp(&t, &t, &zero).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let t = gaussian(50, 2, 4) * 100.0;
        let cfg = MlpConfig {
            learning_rate: 10.0,
            epochs: 50,
            ..MlpConfig::default()
        };
        match fit_mlp(&t, &t, &cfg) {
            Err(e) => assert!(e.is_numerical() && e.to_string().contains("epoch")),
            Ok(net) => panic!("expected divergence, final loss {:?}", net.loss_trace.last()),
        }
    }

    #[test]
    fn training_is_reproducible() {
        let t = gaussian(40, 3, 5);
        let u = t.map(|v| v.sin());
        let cfg = MlpConfig {
            epochs: 20,
            ..MlpConfig::default()
        };
        let a = fit_mlp(&t, &u, &cfg).unwrap();
        let b = fit_mlp(&t, &u, &cfg).unwrap();
        assert_eq!(a, b);
        let pa = a.predict(&t).unwrap();
        let pb = a.predict(&t).unwrap();
        assert!(pa.iter().zip(pb.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn autoencoder_guards_and_rank_one() {
        let z = gaussian(150, 1, 6);
        let a = DMatrix::from_row_slice(1, 3, &[1.0, -0.5, 0.8]);
        let u = &z * a;
        let cfg = MlpConfig {
            activation: Activation::Identity,
            learning_rate: 0.02,
            epochs: 200,
            batch_size: 16,
            seed: 1,
            ..MlpConfig::default()
        };
        let net = fit_autoencoder(&u, &u, &cfg, 1).unwrap();
        assert!(*net.loss_trace.last().unwrap() < 1e-2);
        assert!(fit_autoencoder(&u, &u, &cfg, 3).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = gaussian(5, 2, 7);
        let y = gaussian(5, 2, 8);
        let cfg = MlpConfig {
            hidden: vec![3],
            activation: Activation::Tanh,
            epochs: 1,
            learning_rate: 1e-12,
            ..MlpConfig::default()
        };
        let net = fit_mlp(&x, &y, &cfg).unwrap();
        // one SGD step with lr = h moves each weight by −h·grad
        let h = 1e-6;
        let mut stepped = net.clone();
        stepped.sgd_step(&x, &y, h);
        let (i, j) = (1, 2);
        let grad = (net.layers[0].weights[(i, j)] - stepped.layers[0].weights[(i, j)]) / h;
        let eps = 1e-6;
        let mut plus = net.clone();
        plus.layers[0].weights[(i, j)] += eps;
        let mut minus = net.clone();
        minus.layers[0].weights[(i, j)] -= eps;
        let fd = (plus.mse(&x, &y) - minus.mse(&x, &y)) / (2.0 * eps);
        assert!((grad - fd).abs() < 1e-6, "{grad} vs {fd}");
    }
}
