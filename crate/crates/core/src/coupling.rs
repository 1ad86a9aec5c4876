//! Sequential non-iterative coupling of transport and chemistry.
//!
//! Each time level advects the aqueous species and then re-equilibrates every
//! cell with the selected chemistry backend. Three optional corrections apply
//! to the surrogate path:
//!
//! 1. skip cells whose cation concentrations did not change since their last
//!    chemistry step (already at equilibrium);
//! 2. every `n`-th step, use the equilibrium solver for all cells;
//! 3. rescale surrogate cation outputs so their charge equals the charge of
//!    the cell's pre-reaction solution.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geochem::{
    self, cation_charge, AqueousSolution, ExchangeParams, ExchangerState, GeochemError, CATION_CHARGE,
};
use crate::surrogate::TrainedModel;
use crate::transport::{self, CellState, ColumnState, TransportConfig, TransportError};

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("chemistry failed at step {step}, cell {cell}: {source}")]
    Chemistry {
        step: usize,
        cell: usize,
        #[source]
        source: GeochemError,
    },
    #[error("invalid coupling config: {0}")]
    InvalidConfig(String),
    #[error("surrogate backend selected but no model supplied")]
    MissingModel,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum ChargeError {
    #[error("cannot rescale a cation-free output to charge {target:e} eq/kgw")]
    DegenerateCharge { target: f64 },
}

/// Which chemistry backend a configuration asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Oracle,
    Surrogate,
}

/// One-step chemistry operator applied per cell.
#[derive(Debug, Clone)]
pub enum ChemistryBackend {
    /// The equilibrium solver.
    Oracle,
    /// A trained regression model for the aqueous outputs; the exchanger is
    /// closed by mass balance.
    Surrogate(Arc<TrainedModel>),
}

impl ChemistryBackend {
    pub fn kind(&self) -> BackendKind {
        match self {
            ChemistryBackend::Oracle => BackendKind::Oracle,
            ChemistryBackend::Surrogate(_) => BackendKind::Surrogate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouplingConfig {
    /// Modification 1: skip cells already at equilibrium.
    pub skip_equilibrium: bool,
    /// Relative per-species tolerance for "unchanged" in modification 1.
    pub skip_tolerance: f64,
    /// Modification 2: call the equilibrium solver every `n` steps.
    pub oracle_period: Option<usize>,
    /// Modification 3: charge-balance surrogate outputs.
    pub charge_rescale: bool,
    pub backend: BackendKind,
    /// Keep the per-cell cation fields of every step (needed for full-field rollout errors).
    pub record_fields: bool,
    /// Steps at which to keep a full copy of the column.
    pub snapshot_steps: Vec<usize>,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            skip_equilibrium: false,
            skip_tolerance: 1e-9,
            oracle_period: None,
            charge_rescale: false,
            backend: BackendKind::Oracle,
            record_fields: true,
            snapshot_steps: Vec::new(),
        }
    }
}

impl CouplingConfig {
    /// All three corrections on, with a period of 10.
    pub fn corrected() -> Self {
        Self { skip_equilibrium: true, oracle_period: Some(10), charge_rescale: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), CouplingError> {
        if self.oracle_period == Some(0) {
            return Err(CouplingError::InvalidConfig("oracle_period must be >= 1".into()));
        }
        if !(self.skip_tolerance.is_finite() && self.skip_tolerance >= 0.0) {
            return Err(CouplingError::InvalidConfig(format!("skip_tolerance must be >= 0, got {}", self.skip_tolerance)));
        }
        Ok(())
    }
}

/// Backend usage during one chemistry step, counted in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepLog {
    pub surrogate_calls: usize,
    pub oracle_calls: usize,
    pub skipped_cells: usize,
    /// Surrogate outputs replaced by the oracle because they carried no cation charge.
    pub degenerate_fallbacks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutflowRecord {
    pub step: usize,
    pub time_s: f64,
    pub pore_volumes: f64,
    pub outflow: AqueousSolution,
    pub log: StepLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub records: Vec<OutflowRecord>,
    /// Per step, per cell cation molalities after the chemistry step.
    pub fields: Option<Vec<Vec<[f64; 3]>>>,
    pub snapshots: Vec<(usize, ColumnState)>,
    pub n_cells: usize,
    /// Moles per unit cross-section that entered / left through the boundaries.
    pub cumulative_inflow: [f64; 5],
    pub cumulative_outflow: [f64; 5],
    pub final_state: ColumnState,
}

impl RolloutResult {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_log(&self) -> StepLog {
        self.records.iter().fold(StepLog::default(), |mut acc, r| {
            acc.surrogate_calls += r.log.surrogate_calls;
            acc.oracle_calls += r.log.oracle_calls;
            acc.skipped_cells += r.log.skipped_cells;
            acc.degenerate_fallbacks += r.log.degenerate_fallbacks;
            acc
        })
    }

    pub const CSV_HEADER: &'static str =
        "time_s,pore_volumes,na_out,k_out,ca_out,cl_out,no3_out,surrogate_calls,oracle_calls,skipped_cells";

    /// Writes the outflow series as comma-separated text.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            let o = r.outflow;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.time_s,
                r.pore_volumes,
                o.na,
                o.k,
                o.ca,
                o.cl,
                o.no3,
                r.log.surrogate_calls,
                r.log.oracle_calls,
                r.log.skipped_cells
            )?;
        }
        Ok(())
    }
}

/// Linearly rescales the cations of `output` so their charge equals `target_charge`.
pub fn charge_rescale(output: &AqueousSolution, target_charge: f64) -> Result<AqueousSolution, ChargeError> {
    let charge = output.cation_charge();
    if target_charge == 0.0 {
        return Ok(output.with_cations([0.0; 3]));
    }
    if charge <= 0.0 {
        return Err(ChargeError::DegenerateCharge { target: target_charge });
    }
    let s = target_charge / charge;
    Ok(output.with_cations(output.cations().map(|c| c * s)))
}

/// Column at t = 0: every cell holds `initial` water and an exchanger in
/// equilibrium with it.
pub fn initial_column(
    tcfg: &TransportConfig,
    params: &ExchangeParams,
    initial: &AqueousSolution,
    inflow: &AqueousSolution,
) -> Result<ColumnState, GeochemError> {
    let exchanger = geochem::exchanger_in_equilibrium(initial, params)?;
    Ok(ColumnState::uniform(tcfg.n_cells, CellState::new(*initial, exchanger), *inflow))
}

fn unchanged(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()))
}

/// Equilibrium step for one cell. A cell whose cation charge cannot fill the
/// exchanger (possible after surrogate drift) loses all cations to it.
fn oracle_cell(cell: &CellState, params: &ExchangeParams) -> Result<(AqueousSolution, ExchangerState), GeochemError> {
    match geochem::equilibrate(&cell.solution, &cell.exchanger, params) {
        Ok(r) => Ok((r.solution, r.exchanger)),
        Err(GeochemError::ChargeDeficit { .. }) => {
            let aq = cell.solution.cations();
            let sorbed = cell.exchanger.moles();
            let totals = [0, 1, 2].map(|i| aq[i] + sorbed[i]);
            Ok((cell.solution.with_cations([0.0; 3]), ExchangerState::from_moles(totals)))
        }
        Err(e) => Err(e),
    }
}

/// Surrogate exchanger update: what left the solution went onto the exchanger.
fn close_exchanger(before: &CellState, output: &AqueousSolution) -> ExchangerState {
    let aq_in = before.solution.cations();
    let aq_out = output.cations();
    let sorbed = before.exchanger.moles();
    ExchangerState::from_moles([0, 1, 2].map(|i| (sorbed[i] + aq_in[i] - aq_out[i]).max(0.0)))
}

/// Features fed to a surrogate: aqueous Na/K/Ca then sorbed NaX/KX/CaX2.
pub fn features_of(cell: &CellState) -> [f64; 6] {
    let a = cell.solution.cations();
    let e = cell.exchanger.moles();
    [a[0], a[1], a[2], e[0], e[1], e[2]]
}

/// Chemistry for every cell of a transported column.
pub fn chemistry_step(
    state: &ColumnState,
    ccfg: &CouplingConfig,
    params: &ExchangeParams,
    step_index: usize,
    backend: &ChemistryBackend,
) -> Result<(ColumnState, StepLog), CouplingError> {
    let forced_oracle = ccfg.oracle_period.is_some_and(|n| step_index % n == 0);
    let skip = ccfg.skip_equilibrium && !forced_oracle;
    let model = match backend {
        ChemistryBackend::Surrogate(m) if !forced_oracle => Some(m.as_ref()),
        _ => None,
    };

    let mut log = StepLog::default();
    let mut next = state.clone();
    let active: Vec<usize> = (0..state.cells.len())
        .filter(|&i| {
            let c = &state.cells[i];
            !(skip && unchanged(c.solution.cations(), c.reacted, ccfg.skip_tolerance))
        })
        .collect();
    log.skipped_cells = state.cells.len() - active.len();

    let mut needs_oracle: Vec<usize> = Vec::new();
    match model {
        Some(model) => {
            let features: Vec<[f64; 6]> = active.iter().map(|&i| features_of(&state.cells[i])).collect();
            let predicted = model.predict(&features);
            for (&i, p) in active.iter().zip(predicted) {
                let cell = &state.cells[i];
                let mut out = cell.solution.with_cations(p.map(|v| v.max(0.0)));
                if ccfg.charge_rescale {
                    match charge_rescale(&out, cell.solution.cation_charge()) {
                        Ok(balanced) => out = balanced,
                        Err(ChargeError::DegenerateCharge { .. }) => {
                            log.degenerate_fallbacks += 1;
                            needs_oracle.push(i);
                            continue;
                        }
                    }
                }
                log.surrogate_calls += 1;
                let c = &mut next.cells[i];
                c.exchanger = close_exchanger(cell, &out);
                c.solution = out;
                c.reacted = out.cations();
            }
        }
        None => needs_oracle = active,
    }

    let results: Vec<_> = needs_oracle
        .par_iter()
        .map(|&i| oracle_cell(&state.cells[i], params).map_err(|source| (i, source)))
        .collect();
    for (&i, r) in needs_oracle.iter().zip(results) {
        let (solution, exchanger) =
            r.map_err(|(cell, source)| CouplingError::Chemistry { step: step_index, cell, source })?;
        log.oracle_calls += 1;
        let c = &mut next.cells[i];
        c.solution = solution;
        c.exchanger = exchanger;
        c.reacted = solution.cations();
    }
    Ok((next, log))
}

/// Runs transport and chemistry alternately until the configured number of
/// pore volumes has been injected.
pub fn run_rollout(
    tcfg: &TransportConfig,
    ccfg: &CouplingConfig,
    params: &ExchangeParams,
    initial: &ColumnState,
    backend: &ChemistryBackend,
) -> Result<RolloutResult, CouplingError> {
    tcfg.validate()?;
    ccfg.validate()?;
    params.validate().map_err(|source| CouplingError::Chemistry { step: 0, cell: 0, source })?;
    if initial.cells.len() != tcfg.n_cells {
        return Err(TransportError::ShapeMismatch { got: initial.cells.len(), expected: tcfg.n_cells }.into());
    }
    if !initial.is_valid() {
        return Err(CouplingError::InvalidConfig("initial column holds negative or non-finite values".into()));
    }
    let dt = tcfg.time_step();
    let n_steps = tcfg.n_steps();
    let pv_rate = tcfg.pore_volume_rate();
    let flux = tcfg.darcy_velocity * dt;

    let mut state = initial.clone();
    let mut records = Vec::with_capacity(n_steps);
    let mut fields = ccfg.record_fields.then(|| Vec::with_capacity(n_steps));
    let mut snapshots = Vec::new();
    let mut inflow_total = [0.0; 5];
    let mut outflow_total = [0.0; 5];

    for step in 1..=n_steps {
        let leaving = state.outflow().to_array();
        let entering = state.inflow.to_array();
        for s in 0..5 {
            inflow_total[s] += flux * entering[s];
            outflow_total[s] += flux * leaving[s];
        }
        let transported = transport::advect_step(&state, tcfg, dt)?;
        let (reacted, log) = chemistry_step(&transported, ccfg, params, step, backend)?;
        state = reacted;
        records.push(OutflowRecord {
            step,
            time_s: state.time,
            pore_volumes: state.time * pv_rate,
            outflow: state.outflow(),
            log,
        });
        if let Some(f) = fields.as_mut() {
            f.push(state.cells.iter().map(|c| c.solution.cations()).collect());
        }
        if ccfg.snapshot_steps.contains(&step) {
            snapshots.push((step, state.clone()));
        }
    }
    Ok(RolloutResult {
        records,
        fields,
        snapshots,
        n_cells: tcfg.n_cells,
        cumulative_inflow: inflow_total,
        cumulative_outflow: outflow_total,
        final_state: state,
    })
}

/// Total cation equivalents (aqueous plus sorbed) per unit cross-section.
pub fn cation_equivalents(state: &ColumnState, tcfg: &TransportConfig) -> f64 {
    let aq = state.aqueous_inventory(tcfg);
    let sorbed = state.sorbed_inventory(tcfg);
    cation_charge([aq[0], aq[1], aq[2]]) + (0..3).map(|i| CATION_CHARGE[i] * sorbed[i]).sum::<f64>()
}
