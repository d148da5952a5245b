//! Regression trees that split each node along its own first PLS score.
//!
//! At a node the data are centred, projected on `w = Xᵀy / ||Xᵀy||²`,
//! ordered by decreasing score, and cut at the index minimizing
//!
//! ```text
//! (1−b)·(a·(Var y₁ + Var y₂)/Var y + (1−a)·(Var t₁ + Var t₂)/Var t) + b·(N₁−N₂)²/(N₁+N₂)²
//! ```
//!
//! with population variances. Leaves predict the mean response.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::select_rows;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Weight of response variance against score variance.
    pub a: f64,
    /// Weight of the balance penalty.
    pub b: f64,
    pub min_leaf: usize,
    pub max_depth: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            a: 0.5,
            b: 0.1,
            min_leaf: 5,
            max_depth: 4,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.a) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::invalid(format!(
                "tree weights must lie in [0, 1], got a = {}, b = {}",
                self.a, self.b
            )));
        }
        if self.min_leaf < 2 {
            return Err(Error::invalid("minimum leaf size must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "kebab-case")]
pub enum Node {
    Leaf {
        value: f64,
        n: usize,
    },
    Split {
        centre: Vec<f64>,
        direction: Vec<f64>,
        threshold: f64,
        /// Rows with score above the threshold.
        upper: Box<Node>,
        lower: Box<Node>,
        n: usize,
    },
}

impl Node {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf { value, .. } => *value,
            Node::Split {
                centre,
                direction,
                threshold,
                upper,
                lower,
                ..
            } => {
                let t: f64 = x.iter().zip(centre).zip(direction).map(|((v, c), w)| (v - c) * w).sum();
                if t > *threshold {
                    upper.predict(x)
                } else {
                    lower.predict(x)
                }
            }
        }
    }

    fn count_leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { upper, lower, .. } => upper.count_leaves() + lower.count_leaves(),
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { upper, lower, .. } => 1 + upper.depth().max(lower.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsTree {
    pub root: Node,
    pub config: TreeConfig,
    pub n_inputs: usize,
}

impl PlsTree {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.n_inputs {
            return Err(Error::dim(format!(
                "tree expects {} inputs, found {}",
                self.n_inputs,
                x.ncols()
            )));
        }
        Ok(DVector::from_iterator(
            x.nrows(),
            x.row_iter().map(|r| {
                let row: Vec<f64> = r.iter().copied().collect();
                self.root.predict(&row)
            }),
        ))
    }

    pub fn n_leaves(&self) -> usize {
        self.root.count_leaves()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// The split criterion evaluated directly for the first `s` of the sorted
/// observations against the rest.
pub fn split_criterion(t_sorted: &[f64], y_sorted: &[f64], s: usize, cfg: &TreeConfig) -> f64 {
    let n = t_sorted.len();
    let var_y = population_variance(y_sorted);
    let var_t = population_variance(t_sorted);
    let within_y = population_variance(&y_sorted[..s]) + population_variance(&y_sorted[s..]);
    let within_t = population_variance(&t_sorted[..s]) + population_variance(&t_sorted[s..]);
    let balance = (s as f64 - (n - s) as f64).powi(2) / (n as f64).powi(2);
    (1.0 - cfg.b) * (cfg.a * ratio(within_y, var_y) + (1.0 - cfg.a) * ratio(within_t, var_t)) + cfg.b * balance
}

/// `within / total`, taken as 0 when the node has no spread.
fn ratio(within: f64, total: f64) -> f64 {
    if total > 0.0 {
        within / total
    } else {
        0.0
    }
}

fn admissible(t_sorted: &[f64], s: usize) -> bool {
    t_sorted[s - 1] > t_sorted[s]
}

/// Exhaustive search with [`split_criterion`]; the reference for
/// [`best_split_sorted`].
pub fn brute_force_split(t_sorted: &[f64], y_sorted: &[f64], cfg: &TreeConfig) -> Option<(usize, f64)> {
    let n = t_sorted.len();
    if n < 2 * cfg.min_leaf {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for s in cfg.min_leaf..=n - cfg.min_leaf {
        if !admissible(t_sorted, s) {
            continue;
        }
        let c = split_criterion(t_sorted, y_sorted, s, cfg);
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((s, c));
        }
    }
    best
}

/// Best split index (size of the upper group) using prefix sums. Ties go
/// to the smaller index; positions between equal scores are skipped.
pub fn best_split_sorted(t_sorted: &[f64], y_sorted: &[f64], cfg: &TreeConfig) -> Option<(usize, f64)> {
    let n = t_sorted.len();
    if n < 2 * cfg.min_leaf {
        return None;
    }
    let var_y = population_variance(y_sorted);
    let var_t = population_variance(t_sorted);
    // centring first keeps the running sums well conditioned
    let prefix = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / n as f64;
        let mut s = vec![0.0; n + 1];
        let mut s2 = vec![0.0; n + 1];
        for i in 0..n {
            let c = v[i] - mean;
            s[i + 1] = s[i] + c;
            s2[i + 1] = s2[i] + c * c;
        }
        (s, s2)
    };
    let (ty, ty2) = prefix(y_sorted);
    let (tt, tt2) = prefix(t_sorted);
    let var_range = |s: &[f64], s2: &[f64], lo: usize, hi: usize| {
        let m = (hi - lo) as f64;
        let sum = s[hi] - s[lo];
        ((s2[hi] - s2[lo]) / m - (sum / m).powi(2)).max(0.0)
    };
    let mut best: Option<(usize, f64)> = None;
    for s in cfg.min_leaf..=n - cfg.min_leaf {
        if !admissible(t_sorted, s) {
            continue;
        }
        let within_y = var_range(&ty, &ty2, 0, s) + var_range(&ty, &ty2, s, n);
        let within_t = var_range(&tt, &tt2, 0, s) + var_range(&tt, &tt2, s, n);
        let balance = (s as f64 - (n - s) as f64).powi(2) / (n as f64).powi(2);
        let c = (1.0 - cfg.b) * (cfg.a * ratio(within_y, var_y) + (1.0 - cfg.a) * ratio(within_t, var_t)) + cfg.b * balance;
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((s, c));
        }
    }
    best
}

/// First PLS direction of a node and the node's scores.
pub struct NodeScores {
    pub centre: Vec<f64>,
    pub direction: DVector<f64>,
    pub scores: DVector<f64>,
}

/// `None` when `Xᵀy` vanishes on the node.
pub fn node_scores(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<NodeScores> {
    let n = x.nrows() as f64;
    let centre: Vec<f64> = x.column_iter().map(|c| c.sum() / n).collect();
    let xc = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - centre[j]);
    let yc = y.add_scalar(-y.mean());
    let xty = xc.transpose() * yc;
    let norm2 = xty.norm_squared();
    if !(norm2 > 1e-28 * (xc.norm_squared() * y.norm_squared()).max(f64::MIN_POSITIVE)) {
        return None;
    }
    let direction = xty / norm2;
    let scores = &xc * &direction;
    Some(NodeScores {
        centre,
        direction,
        scores,
    })
}

fn grow(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &TreeConfig, depth: usize) -> Node {
    let n = y.len();
    let leaf = Node::Leaf { value: y.mean(), n };
    if depth >= cfg.max_depth || n < 2 * cfg.min_leaf || population_variance(y.as_slice()) == 0.0 {
        return leaf;
    }
    let Some(node) = node_scores(x, y) else {
        return leaf;
    };
    if population_variance(node.scores.as_slice()) == 0.0 {
        return leaf;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| node.scores[j].total_cmp(&node.scores[i]));
    let t_sorted: Vec<f64> = order.iter().map(|&i| node.scores[i]).collect();
    let y_sorted: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let Some((s, _)) = best_split_sorted(&t_sorted, &y_sorted, cfg) else {
        return leaf;
    };
    let threshold = 0.5 * (t_sorted[s - 1] + t_sorted[s]);
    let (upper_rows, lower_rows) = order.split_at(s);
    let sub = |rows: &[usize]| {
        let yr = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
        grow(&select_rows(x, rows), &yr, cfg, depth + 1)
    };
    Node::Split {
        centre: node.centre,
        direction: node.direction.as_slice().to_vec(),
        threshold,
        upper: Box::new(sub(upper_rows)),
        lower: Box::new(sub(lower_rows)),
        n,
    }
}

pub fn fit_pls_tree(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &TreeConfig) -> Result<PlsTree> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::dim(format!("x has {} rows but y has {}", x.nrows(), y.len())));
    }
    if y.len() < 2 * cfg.min_leaf {
        return Err(Error::invalid(format!(
            "need at least {} rows for minimum leaf size {}",
            2 * cfg.min_leaf,
            cfg.min_leaf
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains non-finite values"));
    }
    Ok(PlsTree {
        root: grow(x, y, cfg, 0),
        config: *cfg,
        n_inputs: x.ncols(),
    })
}
