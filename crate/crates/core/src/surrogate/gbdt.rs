//! Gradient-boosted regression trees for squared loss.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, Presorted, RegressionTree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self { n_trees: 400, max_depth: 6, learning_rate: 0.1, min_samples_leaf: 1 }
    }
}

/// Additive ensemble `base + Σ tree_m(x)`; leaves already carry the shrinkage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostedTrees {
    pub base: f64,
    pub trees: Vec<RegressionTree>,
}

impl GradientBoostedTrees {
    /// Fits one output. Returns the model and the training MSE after each round
    /// (entry 0 is the constant model).
    pub fn fit(data: &Presorted, y: &[f64], params: &GbdtParams) -> (Self, Vec<f64>) {
        let n = data.n_rows();
        let base = if n == 0 { 0.0 } else { y.iter().sum::<f64>() / n as f64 };
        let mut pred = vec![base; n];
        let mut residual: Vec<f64> = y.iter().map(|v| v - base).collect();
        let mse = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
        let mut history = Vec::with_capacity(params.n_trees + 1);
        history.push(mse(&residual));
        let tree_params =
            TreeParams { max_depth: Some(params.max_depth), min_samples_leaf: params.min_samples_leaf, max_features: None };
        let mut trees = Vec::with_capacity(params.n_trees);
        for _ in 0..params.n_trees {
            let mut tree = fit_tree::<ChaCha8Rng>(data, &residual, None, &tree_params, None);
            tree.scale_leaves(params.learning_rate);
            for r in 0..n {
                pred[r] += tree.predict_by(|f| data.value(r, f));
                residual[r] = y[r] - pred[r];
            }
            history.push(mse(&residual));
            trees.push(tree);
        }
        (Self { base, trees }, history)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().fold(self.base, |acc, t| acc + t.predict(x))
    }

    /// Prediction using only the first `k` trees.
    pub fn predict_staged(&self, x: &[f64], k: usize) -> f64 {
        self.trees.iter().take(k).fold(self.base, |acc, t| acc + t.predict(x))
    }
}
