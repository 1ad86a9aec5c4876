//! First-order upwind advection of the aqueous species along a 1D column.
//!
//! `φ ∂C/∂t + u ∂C/∂x = 0` with a prescribed Darcy velocity `u > 0` flowing
//! left to right, inflow concentration on the left boundary and free outflow
//! on the right. The sorbed phase is immobile.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geochem::{AqueousSolution, ExchangerState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("invalid transport config: {0}")]
    InvalidConfig(String),
    #[error("time step {dt:e} s exceeds the stable step {limit:e} s")]
    CflViolation { dt: f64, limit: f64 },
    #[error("column has {got} cells, config expects {expected}")]
    ShapeMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    pub n_cells: usize,
    /// Column length, m.
    pub length: f64,
    /// Darcy velocity, m/s.
    pub darcy_velocity: f64,
    pub porosity: f64,
    /// Courant number used to size the time step.
    pub cfl: f64,
    /// Injected volume at which a rollout stops, in pore volumes.
    pub total_pore_volumes: f64,
    /// Fixed time step overriding the CFL-derived one.
    pub dt: Option<f64>,
    /// Fixed number of steps overriding `total_pore_volumes`.
    pub steps: Option<usize>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            n_cells: 100,
            length: 1.0,
            darcy_velocity: 2.78e-7,
            porosity: 1.0,
            cfl: 0.9,
            total_pore_volumes: 3.0,
            dt: None,
            steps: None,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        let bad = |m: String| Err(TransportError::InvalidConfig(m));
        if self.n_cells < 2 {
            return bad(format!("n_cells must be >= 2, got {}", self.n_cells));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return bad(format!("length must be positive, got {}", self.length));
        }
        // zero velocity is allowed as a degenerate no-flow column
        if !(self.darcy_velocity.is_finite() && self.darcy_velocity >= 0.0) {
            return bad(format!("darcy_velocity must be >= 0, got {}", self.darcy_velocity));
        }
        if !(self.porosity > 0.0 && self.porosity <= 1.0) {
            return bad(format!("porosity must lie in (0, 1], got {}", self.porosity));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl must lie in (0, 1], got {}", self.cfl));
        }
        if !(self.total_pore_volumes.is_finite() && self.total_pore_volumes > 0.0) {
            return bad(format!("total_pore_volumes must be positive, got {}", self.total_pore_volumes));
        }
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return bad(format!("dt must be positive, got {dt}"));
            }
            let limit = stable_dt(self);
            if dt > limit * (1.0 + 1e-12) {
                return Err(TransportError::CflViolation { dt, limit });
            }
        }
        if self.darcy_velocity == 0.0 && (self.dt.is_none() || self.steps.is_none()) {
            return bad("a zero-velocity column needs explicit dt and steps".into());
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n_cells as f64
    }

    /// Time step used by a rollout: the override if present, else [`stable_dt`].
    pub fn time_step(&self) -> f64 {
        self.dt.unwrap_or_else(|| stable_dt(self))
    }

    /// Pore volumes injected per second.
    pub fn pore_volume_rate(&self) -> f64 {
        self.darcy_velocity / (self.porosity * self.length)
    }

    /// Number of steps a rollout takes.
    pub fn n_steps(&self) -> usize {
        if let Some(n) = self.steps {
            return n;
        }
        let per_step = self.pore_volume_rate() * self.time_step();
        // tolerate round-off so 3 PV at a Courant number of 1 is exactly 300 steps
        (self.total_pore_volumes / per_step * (1.0 - 1e-12)).ceil() as usize
    }

    /// Courant number `u dt / (φ Δx)` of a step.
    pub fn courant(&self, dt: f64) -> f64 {
        if self.darcy_velocity == 0.0 {
            0.0
        } else {
            self.darcy_velocity * dt / (self.porosity * self.dx())
        }
    }
}

/// Largest time step with Courant number `cfg.cfl`: `cfl · Δx · φ / u`.
/// Infinite for a zero velocity.
pub fn stable_dt(cfg: &TransportConfig) -> f64 {
    cfg.cfl * cfg.dx() * cfg.porosity / cfg.darcy_velocity
}

/// State of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub solution: AqueousSolution,
    pub exchanger: ExchangerState,
    /// Cation molalities the last chemistry step left in this cell.
    pub reacted: [f64; 3],
}

impl CellState {
    pub fn new(solution: AqueousSolution, exchanger: ExchangerState) -> Self {
        Self { solution, exchanger, reacted: solution.cations() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnState {
    pub cells: Vec<CellState>,
    /// Simulated time, s.
    pub time: f64,
    pub inflow: AqueousSolution,
}

impl ColumnState {
    pub fn uniform(n_cells: usize, cell: CellState, inflow: AqueousSolution) -> Self {
        Self { cells: vec![cell; n_cells], time: 0.0, inflow }
    }

    pub fn is_valid(&self) -> bool {
        self.inflow.is_valid() && self.cells.iter().all(|c| c.solution.is_valid() && c.exchanger.is_valid())
    }

    /// Aqueous moles per unit cross-section, per species.
    pub fn aqueous_inventory(&self, cfg: &TransportConfig) -> [f64; 5] {
        let vol = cfg.porosity * cfg.dx();
        let mut acc = [0.0; 5];
        for c in &self.cells {
            for (a, v) in acc.iter_mut().zip(c.solution.to_array()) {
                *a += v * vol;
            }
        }
        acc
    }

    /// Sorbed moles per unit cross-section, `[Na, K, Ca]`.
    pub fn sorbed_inventory(&self, cfg: &TransportConfig) -> [f64; 3] {
        let vol = cfg.porosity * cfg.dx();
        let mut acc = [0.0; 3];
        for c in &self.cells {
            for (a, v) in acc.iter_mut().zip(c.exchanger.moles()) {
                *a += v * vol;
            }
        }
        acc
    }

    pub fn outflow(&self) -> AqueousSolution {
        self.cells.last().map(|c| c.solution).unwrap_or_default()
    }
}

/// One explicit upwind step of length `dt` for every aqueous species.
pub fn advect_step(state: &ColumnState, cfg: &TransportConfig, dt: f64) -> Result<ColumnState, TransportError> {
    if state.cells.len() != cfg.n_cells {
        return Err(TransportError::ShapeMismatch { got: state.cells.len(), expected: cfg.n_cells });
    }
    let limit = if cfg.darcy_velocity == 0.0 { f64::INFINITY } else { stable_dt(cfg) };
    if !(dt >= 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(TransportError::CflViolation { dt, limit });
    }
    let nu = cfg.courant(dt);
    let mut next = state.clone();
    let mut upstream = state.inflow.to_array();
    for (cell, new) in state.cells.iter().zip(next.cells.iter_mut()) {
        let c = cell.solution.to_array();
        let mut out = [0.0; 5];
        for s in 0..5 {
            out[s] = if nu == 1.0 { upstream[s] } else { c[s] - nu * (c[s] - upstream[s]) };
        }
        new.solution = AqueousSolution::from_array(out);
        upstream = c;
    }
    next.time = state.time + dt;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64], inflow: f64) -> ColumnState {
        ColumnState {
            cells: values
                .iter()
                .map(|&v| CellState::new(AqueousSolution::new(v, 0.0, 0.0, v, 0.0), ExchangerState::new(1.0, 2.0, 3.0)))
                .collect(),
            time: 0.0,
            inflow: AqueousSolution::new(inflow, 0.0, 0.0, inflow, 0.0),
        }
    }

    #[test]
    fn stable_dt_arithmetic() {
        let cfg = TransportConfig { cfl: 1.0, ..Default::default() };
        assert!((stable_dt(&cfg) - 0.01 / 2.78e-7).abs() < 1e-9);
        assert!((stable_dt(&cfg) - 35971.223).abs() < 1e-3);
        let half = TransportConfig { cfl: 0.5, ..cfg };
        assert!((stable_dt(&half) - 0.5 * stable_dt(&cfg)).abs() < 1e-9);
        let phi = TransportConfig { porosity: 0.5, ..cfg };
        assert!((stable_dt(&phi) - 0.5 * stable_dt(&cfg)).abs() < 1e-9);
    }

    #[test]
    fn step_counts() {
        let cfg = TransportConfig { cfl: 1.0, ..Default::default() };
        assert_eq!(cfg.n_steps(), 300);
        assert_eq!(TransportConfig::default().n_steps(), 334);
        assert_eq!(TransportConfig { steps: Some(7), ..cfg }.n_steps(), 7);
    }

    #[test]
    fn validation() {
        assert!(TransportConfig::default().validate().is_ok());
        assert!(TransportConfig { n_cells: 1, ..Default::default() }.validate().is_err());
        assert!(TransportConfig { cfl: 1.5, ..Default::default() }.validate().is_err());
        assert!(TransportConfig { porosity: 0.0, ..Default::default() }.validate().is_err());
        assert!(TransportConfig { darcy_velocity: 0.0, ..Default::default() }.validate().is_err());
        let too_big = TransportConfig { dt: Some(1e9), ..Default::default() };
        assert!(matches!(too_big.validate(), Err(TransportError::CflViolation { .. })));
    }

    #[test]
    fn uniform_field_is_unchanged() {
        let cfg = TransportConfig { n_cells: 5, ..Default::default() };
        let s = column(&[2.0; 5], 2.0);
        let next = advect_step(&s, &cfg, stable_dt(&cfg)).unwrap();
        for (a, b) in s.cells.iter().zip(&next.cells) {
            assert_eq!(a.solution, b.solution);
        }
    }

    #[test]
    fn unit_courant_is_a_shift() {
        let cfg = TransportConfig { n_cells: 4, cfl: 1.0, ..Default::default() };
        let s = column(&[1.0, 2.0, 3.0, 4.0], 9.0);
        let next = advect_step(&s, &cfg, stable_dt(&cfg)).unwrap();
        let na: Vec<f64> = next.cells.iter().map(|c| c.solution.na).collect();
        assert_eq!(na, vec![9.0, 1.0, 2.0, 3.0]);
        assert_eq!(next.cells[2].exchanger, s.cells[2].exchanger);
    }

    #[test]
    fn rejects_unstable_step() {
        let cfg = TransportConfig { n_cells: 4, ..Default::default() };
        let s = column(&[1.0; 4], 1.0);
        assert!(matches!(advect_step(&s, &cfg, 2.0 * stable_dt(&cfg)), Err(TransportError::CflViolation { .. })));
    }

    #[test]
    fn zero_velocity_moves_nothing() {
        let cfg = TransportConfig { n_cells: 3, darcy_velocity: 0.0, dt: Some(100.0), steps: Some(3), ..Default::default() };
        cfg.validate().unwrap();
        let s = column(&[1.0, 2.0, 3.0], 5.0);
        let next = advect_step(&s, &cfg, 100.0).unwrap();
        assert_eq!(next.cells, s.cells);
        assert_eq!(next.time, 100.0);
    }
}
