//! Regression surrogates for the chemistry step.
//!
//! A surrogate maps six features (aqueous Na/K/Ca and sorbed NaX/KX/CaX2) to
//! the three equilibrated aqueous cation molalities. Inputs and outputs are
//! min-max scaled onto `[-1, 1]`. With a residual connection the model is
//! fitted to the change of the aqueous concentrations and the input is added
//! back at prediction time.

pub mod forest;
pub mod gbdt;
pub mod linear;
pub mod mlp;
pub mod scaler;
pub mod tree;
pub mod tuning;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, FeatureVector, TargetVector, N_FEATURES, N_TARGETS};
use forest::{ForestParams, RandomForest};
use gbdt::{GbdtParams, GradientBoostedTrees};
use linear::LinearModel;
use mlp::{Mlp, MlpParams};
use scaler::MinMaxScaler;
use tree::{Presorted, RegressionTree, TreeParams};

pub const MODEL_FORMAT: &str = "ionflow-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("expected rows of {expected} values, got {got} values")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Model family and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    DecisionTree(TreeParams),
    RandomForest(ForestParams),
    GradientBoostedTrees(GbdtParams),
    MultilayerPerceptron(MlpParams),
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::DecisionTree(_) => "decision_tree",
            ModelKind::RandomForest(_) => "random_forest",
            ModelKind::GradientBoostedTrees(_) => "gradient_boosted_trees",
            ModelKind::MultilayerPerceptron(_) => "multilayer_perceptron",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub model: ModelKind,
    #[serde(default)]
    pub residual_connection: bool,
}

impl ModelSpec {
    pub fn new(model: ModelKind, residual_connection: bool) -> Self {
        Self { model, residual_connection }
    }

    pub fn gbdt(residual_connection: bool) -> Self {
        Self::new(ModelKind::GradientBoostedTrees(GbdtParams::default()), residual_connection)
    }

    pub fn mlp(residual_connection: bool) -> Self {
        Self::new(ModelKind::MultilayerPerceptron(MlpParams::default()), residual_connection)
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |m: &str| Err(SurrogateError::InvalidSpec(m.to_string()));
        match &self.model {
            ModelKind::Linear => Ok(()),
            ModelKind::DecisionTree(p) => {
                if p.min_samples_leaf == 0 || p.max_features == Some(0) {
                    return bad("min_samples_leaf and max_features must be >= 1");
                }
                Ok(())
            }
            ModelKind::RandomForest(p) => {
                if p.n_trees == 0 || p.min_samples_leaf == 0 || p.max_features == Some(0) {
                    return bad("random forest needs n_trees, min_samples_leaf and max_features >= 1");
                }
                Ok(())
            }
            ModelKind::GradientBoostedTrees(p) => {
                if p.n_trees == 0 || p.max_depth == 0 || p.min_samples_leaf == 0 {
                    return bad("boosting needs n_trees, max_depth and min_samples_leaf >= 1");
                }
                if !(p.learning_rate > 0.0 && p.learning_rate <= 1.0) {
                    return bad("learning_rate must lie in (0, 1]");
                }
                Ok(())
            }
            ModelKind::MultilayerPerceptron(p) => {
                if p.hidden.is_empty() || p.hidden.contains(&0) {
                    return bad("hidden layers must be non-empty with positive widths");
                }
                if p.epochs == 0 || p.batch_size == 0 {
                    return bad("epochs and batch_size must be >= 1");
                }
                if !(p.learning_rate > 0.0) || !(0.0..1.0).contains(&p.momentum) || p.lr_decay < 0.0 {
                    return bad("learning_rate must be > 0, momentum in [0, 1), lr_decay >= 0");
                }
                Ok(())
            }
        }
    }
}

/// Fitted parameters, all operating on scaled inputs and scaled targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Linear { model: LinearModel },
    /// One tree per output.
    DecisionTree { trees: Vec<RegressionTree> },
    RandomForest { forests: Vec<RandomForest> },
    GradientBoostedTrees { ensembles: Vec<GradientBoostedTrees> },
    MultilayerPerceptron { network: Mlp },
}

impl FittedModel {
    fn predict_into(&self, z: &[f64], out: &mut [f64]) {
        match self {
            FittedModel::Linear { model } => model.predict_into(z, out),
            FittedModel::DecisionTree { trees } => {
                for (o, t) in out.iter_mut().zip(trees) {
                    *o = t.predict(z);
                }
            }
            FittedModel::RandomForest { forests } => {
                for (o, f) in out.iter_mut().zip(forests) {
                    *o = f.predict(z);
                }
            }
            FittedModel::GradientBoostedTrees { ensembles } => {
                for (o, e) in out.iter_mut().zip(ensembles) {
                    *o = e.predict(z);
                }
            }
            FittedModel::MultilayerPerceptron { network } => network.predict_into(z, out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub dataset_id: String,
    pub n_train: usize,
    /// Training loss per round/epoch (scaled units); per output for tree ensembles.
    pub loss_history: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub feature_scaler: MinMaxScaler,
    pub target_scaler: MinMaxScaler,
    pub fitted: FittedModel,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: TrainedModel,
}

/// Fits a surrogate to a labelled dataset.
pub fn fit(spec: &ModelSpec, train: &Dataset) -> Result<TrainedModel, SurrogateError> {
    spec.validate()?;
    if train.is_empty() {
        return Err(SurrogateError::DegenerateData("training set is empty".into()));
    }
    let n = train.len();
    let mut x = Vec::with_capacity(n * N_FEATURES);
    let mut y = Vec::with_capacity(n * N_TARGETS);
    for (f, t) in train.features.iter().zip(&train.targets) {
        if f.iter().chain(t).any(|v| !v.is_finite()) {
            return Err(SurrogateError::DegenerateData("non-finite feature or target".into()));
        }
        x.extend_from_slice(f);
        if spec.residual_connection {
            y.extend((0..N_TARGETS).map(|j| t[j] - f[j]));
        } else {
            y.extend_from_slice(t);
        }
    }
    let feature_scaler = MinMaxScaler::fit(&x, N_FEATURES);
    let target_scaler = MinMaxScaler::fit(&y, N_TARGETS);
    let xs = feature_scaler.transform_all(&x);
    let ys = target_scaler.transform_all(&y);
    let column = |j: usize| -> Vec<f64> { ys.iter().skip(j).step_by(N_TARGETS).copied().collect() };

    let mut loss_history = Vec::new();
    let fitted = match &spec.model {
        ModelKind::Linear => FittedModel::Linear { model: LinearModel::fit(&xs, N_FEATURES, &ys, N_TARGETS)? },
        ModelKind::DecisionTree(p) => {
            let data = Presorted::new(&xs, N_FEATURES);
            let trees = (0..N_TARGETS)
                .map(|j| tree::fit_tree::<rand_chacha::ChaCha8Rng>(&data, &column(j), None, p, None))
                .collect();
            FittedModel::DecisionTree { trees }
        }
        ModelKind::RandomForest(p) => {
            let data = Presorted::new(&xs, N_FEATURES);
            let forests = (0..N_TARGETS).map(|j| RandomForest::fit(&data, &column(j), p, j as u64)).collect();
            FittedModel::RandomForest { forests }
        }
        ModelKind::GradientBoostedTrees(p) => {
            use rayon::prelude::*;
            let data = Presorted::new(&xs, N_FEATURES);
            let fitted: Vec<_> =
                (0..N_TARGETS).into_par_iter().map(|j| GradientBoostedTrees::fit(&data, &column(j), p)).collect();
            let mut ensembles = Vec::with_capacity(N_TARGETS);
            for (e, h) in fitted {
                ensembles.push(e);
                loss_history.push(h);
            }
            FittedModel::GradientBoostedTrees { ensembles }
        }
        ModelKind::MultilayerPerceptron(p) => {
            let (network, history) = Mlp::fit(&xs, N_FEATURES, &ys, N_TARGETS, p);
            loss_history.push(history);
            FittedModel::MultilayerPerceptron { network }
        }
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        feature_scaler,
        target_scaler,
        fitted,
        meta: TrainingMeta { dataset_id: train.provenance.id.clone(), n_train: n, loss_history },
    })
}

impl TrainedModel {
    /// Predicts one row.
    pub fn predict_one(&self, input: &FeatureVector) -> TargetVector {
        let mut z = [0.0; N_FEATURES];
        self.feature_scaler.transform(input, &mut z);
        let mut s = [0.0; N_TARGETS];
        self.fitted.predict_into(&z, &mut s);
        let mut out = [0.0; N_TARGETS];
        self.target_scaler.inverse(&s, &mut out);
        if self.spec.residual_connection {
            for j in 0..N_TARGETS {
                out[j] += input[j];
            }
        }
        out.map(|v| v.max(0.0))
    }

    /// Predicts a batch; row `i` of the output belongs to row `i` of the input.
    pub fn predict(&self, inputs: &[FeatureVector]) -> Vec<TargetVector> {
        inputs.iter().map(|r| self.predict_one(r)).collect()
    }

    /// Predicts row-major input with six values per row.
    pub fn predict_flat(&self, data: &[f64]) -> Result<Vec<TargetVector>, SurrogateError> {
        if data.len() % N_FEATURES != 0 {
            return Err(SurrogateError::ShapeMismatch { expected: N_FEATURES, got: data.len() });
        }
        Ok(data
            .chunks_exact(N_FEATURES)
            .map(|c| {
                let mut row = [0.0; N_FEATURES];
                row.copy_from_slice(c);
                self.predict_one(&row)
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), SurrogateError> {
        let file = ModelFile { format: MODEL_FORMAT.into(), version: MODEL_FORMAT_VERSION, model: self.clone() };
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(w, &file).map_err(|e| SurrogateError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SurrogateError> {
        let r = BufReader::new(File::open(path)?);
        let file: ModelFile = serde_json::from_reader(r).map_err(|e| SurrogateError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(SurrogateError::Format(format!("not a model file (format {:?})", file.format)));
        }
        if file.version != MODEL_FORMAT_VERSION {
            return Err(SurrogateError::Format(format!("unsupported model file version {}", file.version)));
        }
        Ok(file.model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub batch_size: usize,
    pub repeats: usize,
    /// Mean wall-clock seconds per call.
    pub mean_seconds: f64,
    pub per_instance_seconds: f64,
}

/// Times `model.predict` on batches cut from `inputs` (cycled when shorter).
pub fn benchmark_predict(
    model: &TrainedModel,
    inputs: &[FeatureVector],
    batch_sizes: &[usize],
    repeats: usize,
) -> Vec<TimingRow> {
    time_batches(inputs, batch_sizes, repeats, |batch| {
        std::hint::black_box(model.predict(batch));
    })
}

/// Shared timing loop: mean seconds of `run` per batch size.
pub fn time_batches(
    inputs: &[FeatureVector],
    batch_sizes: &[usize],
    repeats: usize,
    mut run: impl FnMut(&[FeatureVector]),
) -> Vec<TimingRow> {
    let repeats = repeats.max(1);
    batch_sizes
        .iter()
        .map(|&b| {
            let batch: Vec<FeatureVector> =
                if inputs.is_empty() { Vec::new() } else { inputs.iter().cycle().take(b).copied().collect() };
            run(&batch);
            let start = Instant::now();
            for _ in 0..repeats {
                run(&batch);
            }
            let mean = start.elapsed().as_secs_f64() / repeats as f64;
            TimingRow { batch_size: b, repeats, mean_seconds: mean, per_instance_seconds: mean / b.max(1) as f64 }
        })
        .collect()
}
