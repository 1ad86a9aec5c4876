//! Reactive transport of a Na/K/Ca cation-exchange column with pluggable
//! chemistry: a ground-truth equilibrium solver or a trained regression
//! surrogate, coupled to 1D advection by sequential operator splitting.

pub mod coupling;
pub mod dataset;
pub mod geochem;
pub mod linalg;
pub mod metrics;
pub mod surrogate;
pub mod transport;

pub use coupling::{
    charge_rescale, chemistry_step, initial_column, run_rollout, BackendKind, ChemistryBackend, CouplingConfig,
    CouplingError, RolloutResult, StepLog,
};
pub use dataset::{
    label, sample, split, Dataset, DatasetError, FeatureVector, Provenance, SamplerKind, SamplerSpec, TargetVector,
};
pub use geochem::{
    equilibrate, equilibrate_bruteforce, exchanger_in_equilibrium, mass_action_residuals, ActivityModel,
    AqueousSolution, Cation, EquilibriumResult, ExchangeParams, ExchangerState, GeochemError, SolveMethod,
};
pub use metrics::{mse, r2, rmse, rollout_error, ErrorReport, MetricsError, RolloutScope};
pub use surrogate::{benchmark_predict, fit, ModelKind, ModelSpec, SurrogateError, TrainedModel};
pub use transport::{advect_step, stable_dt, CellState, ColumnState, TransportConfig, TransportError};
