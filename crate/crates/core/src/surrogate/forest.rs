//! Bagged CART ensembles with per-node feature subsampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, Presorted, RegressionTree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` uses `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 50, max_depth: None, min_samples_leaf: 2, max_features: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
}

impl RandomForest {
    /// `stream` separates the random streams of forests fitted on different outputs.
    pub fn fit(data: &Presorted, y: &[f64], params: &ForestParams, stream: u64) -> Self {
        let n = data.n_rows();
        let d = data.n_features();
        let max_features = params.max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1));
        let tree_params =
            TreeParams { max_depth: params.max_depth, min_samples_leaf: params.min_samples_leaf, max_features: Some(max_features) };
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(stream * 1_000_003 + t as u64);
                let mut counts = vec![0u32; n];
                for _ in 0..n {
                    counts[rng.gen_range(0..n)] += 1;
                }
                fit_tree(data, y, Some(&counts), &tree_params, Some(&mut rng))
            })
            .collect();
        Self { trees }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}
