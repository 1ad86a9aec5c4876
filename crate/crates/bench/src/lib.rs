//! Shared fixtures for the criterion benchmarks.

use std::sync::Arc;

use ionflow_core::dataset::{generate, sample, SamplerSpec};
use ionflow_core::surrogate::gbdt::GbdtParams;
use ionflow_core::surrogate::mlp::MlpParams;
use ionflow_core::{
    advect_step, initial_column, stable_dt, AqueousSolution, ColumnState, ExchangeParams, FeatureVector, ModelKind,
    ModelSpec, TrainedModel, TransportConfig,
};

pub const SEED: u64 = 7;

/// Chemistry inputs drawn like the training data.
pub fn inputs(n: usize) -> Vec<FeatureVector> {
    sample(&SamplerSpec::vanilla_zeros(n, SEED)).expect("valid sampler")
}

/// Small models trained on a few thousand rows; enough to time inference,
/// whose cost does not depend on how well the model fits.
pub fn models() -> Vec<(&'static str, Arc<TrainedModel>)> {
    let ds = generate(&SamplerSpec::vanilla_zeros(4000, SEED), &ExchangeParams::default()).expect("valid sampler");
    let specs = [
        ("linear", ModelSpec::new(ModelKind::Linear, true)),
        ("gbdt", ModelSpec::new(ModelKind::GradientBoostedTrees(GbdtParams::default()), true)),
        ("mlp", ModelSpec::new(ModelKind::MultilayerPerceptron(MlpParams { epochs: 2, ..MlpParams::default() }), true)),
    ];
    specs
        .into_iter()
        .map(|(name, spec)| (name, Arc::new(ionflow_core::fit(&spec, &ds).expect("fit succeeds"))))
        .collect()
}

/// The reference column after `steps` advection steps, so cells carry a
/// mix of the initial and injected waters.
pub fn column(steps: usize) -> (TransportConfig, ColumnState) {
    let tcfg = TransportConfig::default();
    let p = ExchangeParams::default();
    let mut state =
        initial_column(&tcfg, &p, &AqueousSolution::reference_initial(), &AqueousSolution::reference_injected())
            .expect("valid column");
    let dt = stable_dt(&tcfg);
    for _ in 0..steps {
        state = advect_step(&state, &tcfg, dt).expect("stable step");
    }
    (tcfg, state)
}
