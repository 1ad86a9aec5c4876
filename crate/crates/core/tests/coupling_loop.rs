//! Invariants of the operator-splitting loop.

use std::sync::Arc;

use ionflow_core::coupling::{
    cation_equivalents, charge_rescale, chemistry_step, initial_column, run_rollout, BackendKind, ChemistryBackend,
    CouplingConfig,
};
use ionflow_core::dataset::{generate, SamplerSpec};
use ionflow_core::geochem::{AqueousSolution, ExchangeParams, CATION_CHARGE};
use ionflow_core::surrogate::{fit, ModelKind, ModelSpec};
use ionflow_core::transport::{ColumnState, TransportConfig};
use ionflow_core::RolloutResult;
use proptest::prelude::*;

fn small() -> TransportConfig {
    TransportConfig { n_cells: 30, ..TransportConfig::default() }
}

fn start(tcfg: &TransportConfig) -> ColumnState {
    initial_column(tcfg, &ExchangeParams::default(), &AqueousSolution::reference_initial(), &AqueousSolution::reference_injected())
        .unwrap()
}

fn oracle(tcfg: &TransportConfig, ccfg: &CouplingConfig) -> RolloutResult {
    run_rollout(tcfg, ccfg, &ExchangeParams::default(), &start(tcfg), &ChemistryBackend::Oracle).unwrap()
}

fn linear_surrogate() -> ChemistryBackend {
    let ds = generate(&SamplerSpec::vanilla(3000, 5), &ExchangeParams::default()).unwrap();
    ChemistryBackend::Surrogate(Arc::new(fit(&ModelSpec::new(ModelKind::Linear, true), &ds).unwrap()))
}

#[test]
fn oracle_every_step_reproduces_the_oracle_run() {
    let tcfg = small();
    let reference = oracle(&tcfg, &CouplingConfig::default());
    let ccfg = CouplingConfig {
        backend: BackendKind::Surrogate,
        oracle_period: Some(1),
        skip_equilibrium: true,
        charge_rescale: true,
        ..CouplingConfig::default()
    };
    let r = run_rollout(&tcfg, &ccfg, &ExchangeParams::default(), &start(&tcfg), &linear_surrogate()).unwrap();
    assert_eq!(r.total_log().surrogate_calls, 0);
    assert_eq!(r.fields, reference.fields);
    assert_eq!(r.final_state, reference.final_state);
    for (a, b) in r.records.iter().zip(&reference.records) {
        assert_eq!(a.outflow, b.outflow);
    }
}

#[test]
fn closed_budget_of_equivalents() {
    let tcfg = small();
    let r = oracle(&tcfg, &CouplingConfig::default());
    let charge = |a: &[f64; 5]| (0..3).map(|i| CATION_CHARGE[i] * a[i]).sum::<f64>();
    let before = cation_equivalents(&start(&tcfg), &tcfg);
    let after = cation_equivalents(&r.final_state, &tcfg) + charge(&r.cumulative_outflow) - charge(&r.cumulative_inflow);
    assert!((after - before).abs() <= 1e-10 * before, "{before:e} vs {after:e}");
}

#[test]
fn corrections_do_not_change_oracle_runs() {
    let tcfg = small();
    let plain = oracle(&tcfg, &CouplingConfig::default());
    let rescaled = oracle(&tcfg, &CouplingConfig { charge_rescale: true, oracle_period: Some(10), ..CouplingConfig::default() });
    assert_eq!(plain.fields, rescaled.fields);
    let skipping = oracle(&tcfg, &CouplingConfig { skip_equilibrium: true, ..CouplingConfig::default() });
    assert!(skipping.total_log().skipped_cells > 0);
    for (fa, fb) in plain.fields.unwrap().iter().zip(skipping.fields.unwrap()) {
        for (a, b) in fa.iter().zip(fb) {
            for j in 0..3 {
                assert!((a[j] - b[j]).abs() <= 1e-12, "{} vs {}", a[j], b[j]);
            }
        }
    }
}

#[test]
fn equilibrated_column_needs_no_calls_when_skipping() {
    let tcfg = small();
    let ccfg = CouplingConfig { skip_equilibrium: true, ..CouplingConfig::default() };
    let (next, log) = chemistry_step(&start(&tcfg), &ccfg, &ExchangeParams::default(), 1, &ChemistryBackend::Oracle).unwrap();
    assert_eq!((log.oracle_calls, log.surrogate_calls, log.skipped_cells), (0, 0, tcfg.n_cells));
    assert_eq!(next, start(&tcfg));
}

#[test]
fn periodic_oracle_serves_one_step_in_ten() {
    let tcfg = TransportConfig { steps: Some(120), ..small() };
    let ccfg = CouplingConfig { backend: BackendKind::Surrogate, oracle_period: Some(10), ..CouplingConfig::default() };
    let r = run_rollout(&tcfg, &ccfg, &ExchangeParams::default(), &start(&tcfg), &linear_surrogate()).unwrap();
    let log = r.total_log();
    assert_eq!(log.oracle_calls, 12 * tcfg.n_cells);
    assert_eq!(log.surrogate_calls, 108 * tcfg.n_cells);
    for rec in &r.records {
        assert!(rec.outflow.is_valid());
    }
}

#[test]
fn no_flow_keeps_the_initial_outflow() {
    let tcfg = TransportConfig { darcy_velocity: 0.0, dt: Some(3600.0), steps: Some(25), ..small() };
    let r = oracle(&tcfg, &CouplingConfig::default());
    let first = start(&tcfg).outflow();
    for rec in &r.records {
        for (a, b) in rec.outflow.to_array().iter().zip(first.to_array()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-3));
        }
    }
    assert!(r.records.windows(2).all(|w| w[1].pore_volumes >= w[0].pore_volumes));
}

#[test]
fn rollout_csv_has_one_row_per_step() {
    let tcfg = TransportConfig { steps: Some(5), ..small() };
    let r = oracle(&tcfg, &CouplingConfig::default());
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "time_s,pore_volumes,na_out,k_out,ca_out,cl_out,no3_out,surrogate_calls,oracle_calls,skipped_cells"
    );
    assert_eq!(lines.count(), 5);
}

fn solution() -> impl Strategy<Value = AqueousSolution> {
    (prop::array::uniform3(0.0f64..2e-3), 0.0f64..2e-3, 0.0f64..2e-3)
        .prop_map(|(c, cl, no3)| AqueousSolution::new(c[0], c[1], c[2], cl, no3))
}

proptest! {
    #[test]
    fn rescale_hits_the_target(s in solution(), target in 1e-6f64..3e-3) {
        prop_assume!(s.cation_charge() > 0.0);
        let r = charge_rescale(&s, target).unwrap();
        prop_assert!((r.cation_charge() - target).abs() <= 1e-15 * target * 4.0);
        prop_assert_eq!((r.cl, r.no3), (s.cl, s.no3));
    }

    #[test]
    fn rescale_is_idempotent(s in solution(), target in 1e-6f64..3e-3) {
        prop_assume!(s.cation_charge() > 0.0);
        let once = charge_rescale(&s, target).unwrap();
        let twice = charge_rescale(&once, target).unwrap();
        for (a, b) in once.cations().iter().zip(twice.cations()) {
            prop_assert!((a - b).abs() <= 1e-15 * a.abs() * 4.0);
        }
    }

    #[test]
    fn rescale_is_positively_homogeneous(s in solution(), target in 1e-6f64..3e-3, c in 1e-3f64..1e3) {
        prop_assume!(s.cation_charge() > 0.0);
        let scaled = s.with_cations(s.cations().map(|v| v * c));
        let a = charge_rescale(&s, target).unwrap();
        let b = charge_rescale(&scaled, target).unwrap();
        for (x, y) in a.cations().iter().zip(b.cations()) {
            prop_assert!((x - y).abs() <= 1e-14 * x.abs().max(y.abs()));
        }
    }
}

#[test]
fn rescale_edge_cases() {
    let s = AqueousSolution::from_mmol(0.4, 0.4, 0.2, 1.2, 0.0);
    assert_eq!(charge_rescale(&s, s.cation_charge()).unwrap(), s);
    assert_eq!(charge_rescale(&s, 0.0).unwrap().cations(), [0.0; 3]);
    assert!(charge_rescale(&AqueousSolution::default(), 1e-3).is_err());
}
