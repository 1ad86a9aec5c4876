//! Grid search with k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::ForestParams;
use super::gbdt::GbdtParams;
use super::mlp::MlpParams;
use super::tree::TreeParams;
use super::{fit, ModelKind, ModelSpec, SurrogateError};
use crate::dataset::Dataset;
use crate::metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub spec: ModelSpec,
    /// Mean validation MSE over the folds.
    pub mean_mse: f64,
    pub fold_mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub scores: Vec<GridScore>,
    pub best: ModelSpec,
}

/// Evaluates every candidate with `folds`-fold cross-validation and keeps the
/// lowest mean validation MSE (first candidate wins ties).
pub fn grid_search(
    candidates: &[ModelSpec],
    data: &Dataset,
    folds: usize,
    seed: u64,
) -> Result<GridSearchResult, SurrogateError> {
    if candidates.is_empty() {
        return Err(SurrogateError::InvalidSpec("empty hyperparameter grid".into()));
    }
    if folds < 2 || data.len() < folds {
        return Err(SurrogateError::DegenerateData(format!("{} rows cannot form {folds} folds", data.len())));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<Vec<usize>> = (0..folds).map(|k| order.iter().copied().skip(k).step_by(folds).collect()).collect();

    let mut scores = Vec::with_capacity(candidates.len());
    for spec in candidates {
        let mut fold_mse = Vec::with_capacity(folds);
        for k in 0..folds {
            let train_rows: Vec<usize> = (0..folds).filter(|&j| j != k).flat_map(|j| fold_of[j].iter().copied()).collect();
            let train = data.subset(&train_rows);
            let valid = data.subset(&fold_of[k]);
            let model = fit(spec, &train)?;
            let pred = model.predict(&valid.features);
            let mse = metrics::mse(&valid.targets, &pred).map_err(|e| SurrogateError::DegenerateData(e.to_string()))?;
            fold_mse.push(mse);
        }
        let mean_mse = fold_mse.iter().sum::<f64>() / folds as f64;
        scores.push(GridScore { spec: spec.clone(), mean_mse, fold_mse });
    }
    let best = scores
        .iter()
        .fold(None::<&GridScore>, |b, s| match b {
            Some(b) if b.mean_mse <= s.mean_mse => Some(b),
            _ => Some(s),
        })
        .map(|s| s.spec.clone())
        .expect("non-empty grid");
    Ok(GridSearchResult { scores, best })
}

/// Small default grid for each model family.
pub fn default_grid(kind: &ModelKind, residual_connection: bool) -> Vec<ModelSpec> {
    let wrap = |m: ModelKind| ModelSpec::new(m, residual_connection);
    match kind {
        ModelKind::Linear => vec![wrap(ModelKind::Linear)],
        ModelKind::DecisionTree(_) => [Some(8), Some(12), None]
            .into_iter()
            .map(|d| wrap(ModelKind::DecisionTree(TreeParams { max_depth: d, min_samples_leaf: 2, max_features: None })))
            .collect(),
        ModelKind::RandomForest(_) => [None, Some(6)]
            .into_iter()
            .map(|f| wrap(ModelKind::RandomForest(ForestParams { max_features: f, ..Default::default() })))
            .collect(),
        ModelKind::GradientBoostedTrees(_) => [(4, 0.1), (6, 0.1), (6, 0.2)]
            .into_iter()
            .map(|(d, lr)| {
                wrap(ModelKind::GradientBoostedTrees(GbdtParams { max_depth: d, learning_rate: lr, ..Default::default() }))
            })
            .collect(),
        ModelKind::MultilayerPerceptron(_) => [vec![64, 64], vec![128, 128]]
            .into_iter()
            .map(|h| wrap(ModelKind::MultilayerPerceptron(MlpParams { hidden: h, ..Default::default() })))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Provenance;

    #[test]
    fn picks_the_better_depth() {
        let features: Vec<[f64; 6]> =
            (0..300).map(|i| [0, 1, 2, 3, 4, 5].map(|j| ((i * 7 + j * 13) % 97) as f64 / 97.0)).collect();
        let targets = features.iter().map(|f| [(6.0 * f[0]).sin(), f[1] * f[2], f[3]]).collect();
        let data = Dataset { features, targets, provenance: Provenance::default() };
        let shallow = ModelSpec::new(ModelKind::DecisionTree(TreeParams { max_depth: Some(1), ..Default::default() }), false);
        let deep = ModelSpec::new(ModelKind::DecisionTree(TreeParams { max_depth: Some(8), ..Default::default() }), false);
        let r = grid_search(&[shallow, deep.clone()], &data, 3, 1).unwrap();
        assert_eq!(r.best, deep);
        assert_eq!(r.scores.len(), 2);
        assert!(r.scores.iter().all(|s| s.fold_mse.len() == 3));
    }

    #[test]
    fn rejects_empty_grid() {
        assert!(grid_search(&[], &Dataset::default(), 3, 0).is_err());
    }
}
