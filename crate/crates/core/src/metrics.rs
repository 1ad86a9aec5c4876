//! One-shot and rollout error metrics.
//!
//! The per-sample squared error averages over the three cations, so for a
//! batch the MSE is the mean over samples and cations and RMSE is its root.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::RolloutResult;
use crate::dataset::{TargetVector, N_TARGETS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {truth} truth rows vs {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("metric needs at least {0} samples")]
    TooFewSamples(usize),
    #[error("truth is constant; R² is undefined")]
    DegenerateTruth,
    #[error("rollout grids differ: {0}")]
    GridMismatch(String),
}

fn check(truth: &[TargetVector], pred: &[TargetVector], min: usize) -> Result<(), MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch { truth: truth.len(), pred: pred.len() });
    }
    if truth.len() < min {
        return Err(MetricsError::TooFewSamples(min));
    }
    Ok(())
}

pub fn mse(truth: &[TargetVector], pred: &[TargetVector]) -> Result<f64, MetricsError> {
    check(truth, pred, 1)?;
    let sum: f64 = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| (0..N_TARGETS).map(|j| (t[j] - p[j]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / (truth.len() * N_TARGETS) as f64)
}

pub fn rmse(truth: &[TargetVector], pred: &[TargetVector]) -> Result<f64, MetricsError> {
    mse(truth, pred).map(f64::sqrt)
}

/// Coefficient of determination pooled over the three targets: one minus the
/// total residual sum of squares over the total sum of squares about each
/// target's own mean.
pub fn r2(truth: &[TargetVector], pred: &[TargetVector]) -> Result<f64, MetricsError> {
    check(truth, pred, 2)?;
    let (ss_res, ss_tot) = (0..N_TARGETS).fold((0.0, 0.0), |(res, tot), j| {
        let (r, t) = sums_of_squares(truth, pred, j);
        (res + r, tot + t)
    });
    if ss_tot == 0.0 {
        return Err(MetricsError::DegenerateTruth);
    }
    Ok(1.0 - ss_res / ss_tot)
}

fn sums_of_squares(truth: &[TargetVector], pred: &[TargetVector], j: usize) -> (f64, f64) {
    let mean = truth.iter().map(|t| t[j]).sum::<f64>() / truth.len() as f64;
    truth.iter().zip(pred).fold((0.0, 0.0), |(res, tot), (t, p)| {
        (res + (t[j] - p[j]).powi(2), tot + (t[j] - mean).powi(2))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetError {
    pub mse: f64,
    pub rmse: f64,
    /// `None` when this target is constant in the truth.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub n_samples: usize,
    /// Na, K, Ca.
    pub per_target: [TargetError; 3],
    pub pooled: TargetError,
}

impl ErrorReport {
    pub fn compute(truth: &[TargetVector], pred: &[TargetVector]) -> Result<Self, MetricsError> {
        check(truth, pred, 2)?;
        let per_target = [0, 1, 2].map(|j| {
            let (res, tot) = sums_of_squares(truth, pred, j);
            let mse = res / truth.len() as f64;
            TargetError { mse, rmse: mse.sqrt(), r2: (tot > 0.0).then(|| 1.0 - res / tot) }
        });
        let pooled_mse = mse(truth, pred)?;
        let pooled = TargetError { mse: pooled_mse, rmse: pooled_mse.sqrt(), r2: r2(truth, pred).ok() };
        Ok(Self { n_samples: truth.len(), per_target, pooled })
    }

    pub const CSV_HEADER: &'static str = "target,mse,rmse,r2,n_samples";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        let rows = ["na", "k", "ca"].iter().zip(&self.per_target).chain(std::iter::once((&"pooled", &self.pooled)));
        for (name, e) in rows {
            let r2 = e.r2.map_or(String::new(), |v| v.to_string());
            writeln!(w, "{name},{},{},{r2},{}", e.mse, e.rmse, self.n_samples)?;
        }
        Ok(())
    }
}

/// Which values a rollout error compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutScope {
    /// Every cell's cations.
    #[default]
    FullField,
    /// Only the outflow cations.
    Outflow,
}

/// Mean over time steps of the per-step RMSE between two rollouts.
pub fn rollout_error(reference: &RolloutResult, test: &RolloutResult, scope: RolloutScope) -> Result<f64, MetricsError> {
    if reference.len() != test.len() {
        return Err(MetricsError::GridMismatch(format!("{} vs {} steps", reference.len(), test.len())));
    }
    if reference.is_empty() {
        return Err(MetricsError::TooFewSamples(1));
    }
    for (a, b) in reference.records.iter().zip(&test.records) {
        if (a.time_s - b.time_s).abs() > 1e-9 * a.time_s.abs().max(1.0) {
            return Err(MetricsError::GridMismatch(format!("step {} at t = {} vs {}", a.step, a.time_s, b.time_s)));
        }
    }
    let per_step: Vec<f64> = match scope {
        RolloutScope::Outflow => reference
            .records
            .iter()
            .zip(&test.records)
            .map(|(a, b)| {
                let (x, y) = (a.outflow.cations(), b.outflow.cations());
                ((0..3).map(|j| (x[j] - y[j]).powi(2)).sum::<f64>() / 3.0).sqrt()
            })
            .collect(),
        RolloutScope::FullField => {
            let (Some(fa), Some(fb)) = (&reference.fields, &test.fields) else {
                return Err(MetricsError::GridMismatch("full-field error needs recorded fields".into()));
            };
            if reference.n_cells != test.n_cells {
                return Err(MetricsError::GridMismatch(format!("{} vs {} cells", reference.n_cells, test.n_cells)));
            }
            fa.iter()
                .zip(fb)
                .map(|(sa, sb)| {
                    let sq: f64 = sa.iter().zip(sb).map(|(x, y)| (0..3).map(|j| (x[j] - y[j]).powi(2)).sum::<f64>()).sum();
                    (sq / (3 * sa.len()) as f64).sqrt()
                })
                .collect()
        }
    };
    Ok(per_step.iter().sum::<f64>() / per_step.len() as f64)
}
