//! Experiment building blocks shared by the subcommands and the acceptance suite.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use anyhow::{Context, Result};
use ionflow_core::dataset::{self, ReferenceStats, SamplerKind, SamplerSpec};
use ionflow_core::metrics::{ErrorReport, RolloutScope};
use ionflow_core::surrogate::{self, TimingRow};
use ionflow_core::{
    coupling, geochem, run_rollout, split, ChemistryBackend, ColumnState, CouplingConfig, Dataset, FeatureVector,
    ModelSpec, RolloutResult, TrainedModel,
};
use serde::Serialize;

use crate::config::{Corrections, ExperimentConfig};

/// A validated configuration plus lazily computed shared results.
pub struct Lab {
    pub cfg: ExperimentConfig,
    initial: ColumnState,
    reference: OnceLock<RolloutResult>,
    stats: OnceLock<ReferenceStats>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Arc<TrainedModel>,
    pub report: ErrorReport,
    pub n_train: usize,
    pub n_test: usize,
    pub fit_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RolloutRow {
    pub name: String,
    pub error: f64,
    pub outflow_error: f64,
    pub surrogate_calls: usize,
    pub oracle_calls: usize,
    pub skipped_cells: usize,
    pub degenerate_fallbacks: usize,
}

impl RolloutRow {
    pub const CSV_HEADER: &'static str =
        "name,rollout_error,outflow_error,surrogate_calls,oracle_calls,skipped_cells,degenerate_fallbacks";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.name,
            self.error,
            self.outflow_error,
            self.surrogate_calls,
            self.oracle_calls,
            self.skipped_cells,
            self.degenerate_fallbacks
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub sampler: String,
    pub n: usize,
    pub held_out_rmse: f64,
    pub rollout_error: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "sampler,n,held_out_rmse,rollout_error";

    pub fn csv(&self) -> String {
        format!("{},{},{},{}", self.sampler, self.n, self.held_out_rmse, self.rollout_error)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub name: String,
    pub timing: TimingRow,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str = "name,batch_size,repeats,mean_seconds,per_instance_seconds";

    pub fn csv(&self) -> String {
        let t = &self.timing;
        format!("{},{},{},{},{}", self.name, t.batch_size, t.repeats, t.mean_seconds, t.per_instance_seconds)
    }
}

/// Outflow features of the oracle breakthrough curve.
#[derive(Debug, Clone, Serialize)]
pub struct Breakthrough {
    /// First step whose Ca outflow reaches 0.01 mmol/kgw.
    pub ca_breakthrough_step: Option<usize>,
    /// Lowest Na outflow before Ca breakthrough, as a fraction of the initial Na.
    pub na_min_fraction_before_ca: f64,
    /// Median K outflow over steps after Na fell below 1 % and before Ca breakthrough.
    pub k_plateau: Option<f64>,
    pub k_plateau_steps: usize,
    /// Highest Ca outflow over the plateau steps.
    pub ca_max_on_plateau: f64,
    pub final_ca: f64,
}

/// Ca outflow regarded as breakthrough, mol/kgw.
pub const CA_BREAKTHROUGH: f64 = 1e-5;

pub fn breakthrough(reference: &RolloutResult, initial_na: f64) -> Breakthrough {
    let recs = &reference.records;
    let bt = recs.iter().position(|r| r.outflow.ca >= CA_BREAKTHROUGH);
    let before = &recs[..bt.unwrap_or(recs.len())];
    let na_min = before.iter().map(|r| r.outflow.na).fold(f64::INFINITY, f64::min);
    let na_gone = before.iter().position(|r| r.outflow.na < 0.01 * initial_na);
    let plateau: Vec<&coupling::OutflowRecord> = match na_gone {
        Some(start) => before[start..].iter().collect(),
        None => Vec::new(),
    };
    let mut k: Vec<f64> = plateau.iter().map(|r| r.outflow.k).collect();
    k.sort_by(f64::total_cmp);
    Breakthrough {
        ca_breakthrough_step: bt.map(|i| recs[i].step),
        na_min_fraction_before_ca: if initial_na > 0.0 { na_min / initial_na } else { 0.0 },
        k_plateau: (!k.is_empty()).then(|| k[k.len() / 2]),
        k_plateau_steps: k.len(),
        ca_max_on_plateau: plateau.iter().map(|r| r.outflow.ca).fold(0.0, f64::max),
        final_ca: recs.last().map_or(0.0, |r| r.outflow.ca),
    }
}

impl Lab {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let initial =
            coupling::initial_column(&cfg.transport, &cfg.exchange, &cfg.solutions.initial, &cfg.solutions.injected)
                .context("cannot equilibrate the initial column")?;
        Ok(Self { cfg, initial, reference: OnceLock::new(), stats: OnceLock::new() })
    }

    pub fn initial_state(&self) -> &ColumnState {
        &self.initial
    }

    /// Oracle rollout with no corrections; every comparison is made against it.
    pub fn reference(&self) -> Result<&RolloutResult> {
        if let Some(r) = self.reference.get() {
            return Ok(r);
        }
        let ccfg = CouplingConfig {
            skip_equilibrium: false,
            oracle_period: None,
            charge_rescale: false,
            backend: ionflow_core::BackendKind::Oracle,
            record_fields: true,
            ..self.cfg.coupling.clone()
        };
        let r = run_rollout(&self.cfg.transport, &ccfg, &self.cfg.exchange, &self.initial, &ChemistryBackend::Oracle)
            .context("oracle reference rollout")?;
        Ok(self.reference.get_or_init(|| r))
    }

    /// Chemistry-input statistics of the oracle simulation.
    pub fn stats(&self) -> Result<&ReferenceStats> {
        if let Some(s) = self.stats.get() {
            return Ok(s);
        }
        let s = dataset::reference_stats(
            &self.cfg.transport,
            &self.cfg.exchange,
            &self.cfg.solutions.initial,
            &self.cfg.solutions.injected,
        )?;
        Ok(self.stats.get_or_init(|| s))
    }

    /// Fully resolved sampler; `n` overrides the entry's row count.
    pub fn sampler_spec(&self, name: &str, n: Option<usize>) -> Result<SamplerSpec> {
        let e = self.cfg.sampler(name)?;
        let mut spec = SamplerSpec {
            kind: e.kind,
            n: n.unwrap_or(e.n),
            seed: e.seed.unwrap_or(self.cfg.seed),
            zero_prob: e.zero_prob,
            exchange_capacity: self.cfg.exchange.cec,
            max_attempts: e.max_attempts,
            ..SamplerSpec::default()
        };
        match e.kind {
            SamplerKind::Vanilla | SamplerKind::VanillaZeros => {
                spec.lo = e.lo.unwrap_or(spec.lo);
                spec.hi = e.hi.unwrap_or(spec.hi);
            }
            SamplerKind::Ranged | SamplerKind::RangedZeros => {
                let (lo, hi) = match (e.lo, e.hi) {
                    (Some(lo), Some(hi)) => (lo, hi),
                    (lo, hi) => {
                        let (slo, shi) = self.stats()?.ranged_bounds();
                        (lo.unwrap_or(slo), hi.unwrap_or(shi))
                    }
                };
                spec.lo = lo;
                spec.hi = hi;
            }
            SamplerKind::Covariance => {
                let (mean, cov) = match (e.mean, e.cov) {
                    (Some(m), Some(c)) => (m, c),
                    _ => {
                        let s = self.stats()?;
                        (s.mean, s.cov)
                    }
                };
                spec.mean = Some(mean);
                spec.cov = Some(cov);
                spec.lo = e.lo.unwrap_or([0.0; 6]);
                spec.hi = e.hi.unwrap_or([f64::INFINITY; 6]);
            }
        }
        spec.validate().with_context(|| format!("sampler {name:?}"))?;
        Ok(spec)
    }

    pub fn generate(&self, sampler: &str, n: Option<usize>) -> Result<Dataset> {
        let spec = self.sampler_spec(sampler, n)?;
        let mut ds = dataset::generate(&spec, &self.cfg.exchange).with_context(|| format!("sampler {sampler:?}"))?;
        ds.provenance.id = format!("{sampler}-n{}-seed{}", spec.n, spec.seed);
        Ok(ds)
    }

    /// Split, fit and score on the held-out part.
    pub fn train(&self, spec: &ModelSpec, ds: &Dataset) -> Result<TrainOutcome> {
        let (train, test) = split(ds, self.cfg.split.train_fraction, self.cfg.split_seed());
        let start = Instant::now();
        let model = surrogate::fit(spec, &train).context("training")?;
        let fit_seconds = start.elapsed().as_secs_f64();
        let pred = model.predict(&test.features);
        let report = ErrorReport::compute(&test.targets, &pred).context("held-out report")?;
        Ok(TrainOutcome { model: Arc::new(model), report, n_train: train.len(), n_test: test.len(), fit_seconds })
    }

    pub fn rollout(&self, ccfg: &CouplingConfig, backend: &ChemistryBackend) -> Result<RolloutResult> {
        let ccfg = CouplingConfig { record_fields: true, ..ccfg.clone() };
        run_rollout(&self.cfg.transport, &ccfg, &self.cfg.exchange, &self.initial, backend).context("rollout")
    }

    pub fn surrogate_rollout(&self, model: &Arc<TrainedModel>, corrections: Corrections) -> Result<RolloutResult> {
        self.rollout(&self.cfg.coupling_for(corrections), &ChemistryBackend::Surrogate(model.clone()))
    }

    /// Scores a rollout against the oracle reference.
    pub fn score(&self, name: &str, r: &RolloutResult) -> Result<RolloutRow> {
        let reference = self.reference()?;
        let log = r.total_log();
        Ok(RolloutRow {
            name: name.to_string(),
            error: ionflow_core::rollout_error(reference, r, RolloutScope::FullField)?,
            outflow_error: ionflow_core::rollout_error(reference, r, RolloutScope::Outflow)?,
            surrogate_calls: log.surrogate_calls,
            oracle_calls: log.oracle_calls,
            skipped_cells: log.skipped_cells,
            degenerate_fallbacks: log.degenerate_fallbacks,
        })
    }

    /// Rollouts adding one correction at a time.
    pub fn ablation(&self, model: &Arc<TrainedModel>) -> Result<Vec<RolloutRow>> {
        [
            ("none", Corrections::None),
            ("mod1", Corrections::Skip),
            ("mod1+2", Corrections::SkipPeriodic),
            ("mod1+2+3", Corrections::All),
        ]
        .into_iter()
        .map(|(name, c)| self.score(name, &self.surrogate_rollout(model, c)?))
        .collect()
    }

    /// Dataset strategy and size sweep, each model scored by rollout error.
    /// `progress` sees every finished row.
    pub fn sweep(&self, mut progress: impl FnMut(&SweepRow)) -> Result<Vec<SweepRow>> {
        let spec = self.cfg.model(&self.cfg.sweep.model)?.clone();
        let mut rows = Vec::new();
        for sampler in &self.cfg.sweep.samplers {
            for &n in &self.cfg.sweep.sizes {
                let ds = self.generate(sampler, Some(n))?;
                let t = self.train(&spec, &ds)?;
                let r = self.surrogate_rollout(&t.model, self.cfg.sweep.corrections)?;
                let row = SweepRow {
                    sampler: sampler.clone(),
                    n,
                    held_out_rmse: t.report.pooled.rmse,
                    rollout_error: self.score(sampler, &r)?.error,
                };
                progress(&row);
                rows.push(row);
            }
        }
        Ok(rows)
    }

    /// Uniformly sampled timing inputs.
    pub fn bench_inputs(&self, n: usize) -> Result<Vec<FeatureVector>> {
        let spec = SamplerSpec { exchange_capacity: self.cfg.exchange.cec, ..SamplerSpec::vanilla(n, self.cfg.seed) };
        Ok(dataset::sample(&spec)?)
    }

    /// Timing table for the given models plus the oracle baseline.
    pub fn bench(&self, models: &[(String, Arc<TrainedModel>)]) -> Result<Vec<BenchRow>> {
        let b = &self.cfg.bench;
        let largest = b.batch_sizes.iter().copied().max().unwrap_or(1);
        let inputs = self.bench_inputs(largest.max(b.oracle_batch))?;
        let mut rows = Vec::new();
        for (name, m) in models {
            for timing in surrogate::benchmark_predict(m, &inputs, &b.batch_sizes, b.repeats) {
                rows.push(BenchRow { name: name.clone(), timing });
            }
        }
        let params = self.cfg.exchange;
        let oracle_sizes: Vec<usize> = b.batch_sizes.iter().copied().filter(|&s| s <= b.oracle_batch).collect();
        let oracle_repeats = (b.repeats / 10).max(1);
        for timing in surrogate::time_batches(&inputs, &oracle_sizes, oracle_repeats, |batch| {
            for f in batch {
                let aq = geochem::AqueousSolution::new(f[0], f[1], f[2], 0.0, 0.0);
                let ex = geochem::ExchangerState::new(f[3], f[4], f[5]);
                let _ = std::hint::black_box(geochem::equilibrate(&aq, &ex, &params));
            }
        }) {
            rows.push(BenchRow { name: "oracle".into(), timing });
        }
        Ok(rows)
    }
}
