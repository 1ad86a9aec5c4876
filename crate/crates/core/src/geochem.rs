//! Cation-exchange equilibrium for the Na⁺/K⁺/Ca²⁺ system.
//!
//! Exchange species follow the Gaines–Thomas convention: the activity of a
//! sorbed species is its equivalent fraction `β` of the exchange capacity.
//! The half reactions
//!
//! ```text
//! Na+  + X-  = NaX     β_NaX  = K_Na · a_Na · x
//! K+   + X-  = KX      β_KX   = K_K  · a_K  · x
//! Ca2+ + 2X- = CaX2    β_CaX2 = K_Ca · a_Ca · x²
//! ```
//!
//! share one latent exchange activity `x` fixed by `Σβ = 1`. Together with one
//! mass balance per cation this closes the system. Two independent solvers are
//! provided: a damped Newton iteration in log space ([`equilibrate`]) and a
//! bracketing bisection on `x` ([`equilibrate_bruteforce`]) used as an oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Charge numbers of the exchangeable cations, in `[Na, K, Ca]` order.
pub const CATION_CHARGE: [f64; 3] = [1.0, 1.0, 2.0];

/// Relative slack used to decide that the exchanger exactly absorbs every cation.
const SATURATION_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 200;
const NEWTON_MAX_HALVINGS: usize = 50;
/// Newton iterates until every residual is below `POLISH_TOL`, and accepts a
/// stalled iterate once they are below `ACCEPT_TOL`.
const POLISH_TOL: f64 = 1e-15;
const ACCEPT_TOL: f64 = 1e-13;
/// Residual bound a returned equilibrium must satisfy.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeochemError {
    #[error("invalid exchange parameters: {0}")]
    InvalidParams(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("equilibrium solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("cation charge {available:e} eq/kgw cannot fill exchange capacity {capacity:e} eq/kgw")]
    ChargeDeficit { available: f64, capacity: f64 },
}

/// The exchangeable cations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cation {
    Na,
    K,
    Ca,
}

impl Cation {
    pub const ALL: [Cation; 3] = [Cation::Na, Cation::K, Cation::Ca];

    pub fn index(self) -> usize {
        match self {
            Cation::Na => 0,
            Cation::K => 1,
            Cation::Ca => 2,
        }
    }

    pub fn charge(self) -> f64 {
        CATION_CHARGE[self.index()]
    }
}

/// Molalities (mol/kgw) of the transported species in one cell or stream.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AqueousSolution {
    pub na: f64,
    pub k: f64,
    pub ca: f64,
    pub cl: f64,
    pub no3: f64,
}

impl AqueousSolution {
    pub const N_SPECIES: usize = 5;

    pub fn new(na: f64, k: f64, ca: f64, cl: f64, no3: f64) -> Self {
        Self { na, k, ca, cl, no3 }
    }

    /// Builds a solution from millimolal values.
    pub fn from_mmol(na: f64, k: f64, ca: f64, cl: f64, no3: f64) -> Self {
        Self::new(na * 1e-3, k * 1e-3, ca * 1e-3, cl * 1e-3, no3 * 1e-3)
    }

    /// Resident water of the column before injection (Na 1.0, K 0.2, NO3 1.2 mmol/kgw).
    pub fn reference_initial() -> Self {
        Self::from_mmol(1.0, 0.2, 0.0, 0.0, 1.2)
    }

    /// Injected CaCl2 water (Ca 0.6, Cl 1.2 mmol/kgw).
    pub fn reference_injected() -> Self {
        Self::from_mmol(0.0, 0.0, 0.6, 1.2, 0.0)
    }

    pub fn cations(&self) -> [f64; 3] {
        [self.na, self.k, self.ca]
    }

    pub fn with_cations(mut self, c: [f64; 3]) -> Self {
        self.na = c[0];
        self.k = c[1];
        self.ca = c[2];
        self
    }

    /// Cation charge `na + k + 2 ca` in eq/kgw.
    pub fn cation_charge(&self) -> f64 {
        cation_charge(self.cations())
    }

    pub fn anion_charge(&self) -> f64 {
        self.cl + self.no3
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.na, self.k, self.ca, self.cl, self.no3]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Charge of a `[Na, K, Ca]` triple in equivalents.
pub fn cation_charge(c: [f64; 3]) -> f64 {
    c[0] * CATION_CHARGE[0] + c[1] * CATION_CHARGE[1] + c[2] * CATION_CHARGE[2]
}

/// Sorbed amounts in mol per kgw of contacting water.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExchangerState {
    pub na_x: f64,
    pub k_x: f64,
    pub ca_x2: f64,
}

impl ExchangerState {
    pub fn new(na_x: f64, k_x: f64, ca_x2: f64) -> Self {
        Self { na_x, k_x, ca_x2 }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Moles of each cation held by the exchanger, `[Na, K, Ca]`.
    pub fn moles(&self) -> [f64; 3] {
        [self.na_x, self.k_x, self.ca_x2]
    }

    pub fn from_moles(m: [f64; 3]) -> Self {
        Self::new(m[0], m[1], m[2])
    }

    pub fn equivalents(&self) -> f64 {
        cation_charge(self.moles())
    }

    /// Equivalent fractions `β` for the given capacity. All zero when `cec == 0`.
    pub fn fractions(&self, cec: f64) -> [f64; 3] {
        if cec == 0.0 {
            return [0.0; 3];
        }
        let m = self.moles();
        [0, 1, 2].map(|i| CATION_CHARGE[i] * m[i] / cec)
    }

    pub fn is_valid(&self) -> bool {
        self.moles().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Activity model for aqueous species. Only ideal solutions are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ActivityModel {
    #[default]
    Ideal,
}

impl ActivityModel {
    fn activity(self, molality: f64) -> f64 {
        match self {
            ActivityModel::Ideal => molality,
        }
    }
}

/// Selectivities of the exchange half reactions and the exchange capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExchangeParams {
    pub log_k_na: f64,
    pub log_k_k: f64,
    pub log_k_ca: f64,
    /// Exchange capacity, eq/kgw.
    pub cec: f64,
    pub activity_model: ActivityModel,
}

impl Default for ExchangeParams {
    fn default() -> Self {
        Self {
            log_k_na: 0.0,
            log_k_k: 0.7,
            log_k_ca: 0.8,
            cec: 1.1e-3,
            activity_model: ActivityModel::Ideal,
        }
    }
}

impl ExchangeParams {
    pub fn validate(&self) -> Result<(), GeochemError> {
        if !self.cec.is_finite() || self.cec < 0.0 {
            return Err(GeochemError::InvalidParams(format!("cec must be finite and >= 0, got {}", self.cec)));
        }
        for (name, v) in [("log_k_na", self.log_k_na), ("log_k_k", self.log_k_k), ("log_k_ca", self.log_k_ca)] {
            if !v.is_finite() {
                return Err(GeochemError::InvalidParams(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn log_k(&self, c: Cation) -> f64 {
        match c {
            Cation::Na => self.log_k_na,
            Cation::K => self.log_k_k,
            Cation::Ca => self.log_k_ca,
        }
    }

    /// Selectivity constants `10^log_k` in `[Na, K, Ca]` order.
    pub fn selectivities(&self) -> [f64; 3] {
        Cation::ALL.map(|c| 10f64.powf(self.log_k(c)))
    }

    /// `log10 K_{B\A}` of the exchange `B + (z_B/z_A) A-X = B-X + (z_B/z_A) A`,
    /// derived from the half-reaction constants. For two monovalent ions this is
    /// simply `log_k_B - log_k_A`.
    pub fn exchange_log_k(&self, b: Cation, a: Cation) -> f64 {
        self.log_k(b) - b.charge() / a.charge() * self.log_k(a)
    }
}

/// How an equilibrium was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMethod {
    /// No exchanger (`cec == 0`): everything stays in solution.
    NoExchanger,
    /// Cation charge exactly equals the capacity: everything is sorbed.
    Saturated,
    Newton,
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumResult {
    pub solution: AqueousSolution,
    pub exchanger: ExchangerState,
    /// Latent exchange activity `x` (infinite when saturated, zero without an exchanger).
    pub exchange_activity: f64,
    pub iterations: usize,
    pub max_residual: f64,
    pub method: SolveMethod,
}

/// Mass-action residuals `[r_Na, r_K, r_Ca, Σβ - 1]` at latent activity `x`.
///
/// The first three compare the exchanger's equivalent fractions with the
/// mass-action prediction `K_i a_i x^{z_i}`; the last one is the sum of the
/// mass-action fractions minus one.
pub fn mass_action_residuals(
    solution: &AqueousSolution,
    exchanger: &ExchangerState,
    x: f64,
    params: &ExchangeParams,
) -> [f64; 4] {
    let k = params.selectivities();
    let c = solution.cations();
    let predicted: [f64; 3] =
        [0, 1, 2].map(|i| k[i] * params.activity_model.activity(c[i]) * x.powi(CATION_CHARGE[i] as i32));
    let beta = exchanger.fractions(params.cec);
    let mut r = [0.0; 4];
    for i in 0..3 {
        r[i] = if params.cec == 0.0 { exchanger.moles()[i] } else { beta[i] - predicted[i] };
    }
    r[3] = predicted.iter().sum::<f64>() - 1.0;
    r
}

fn validate_inputs(totals: &AqueousSolution, exch: &ExchangerState, params: &ExchangeParams) -> Result<(), GeochemError> {
    params.validate()?;
    if !totals.is_valid() {
        return Err(GeochemError::InvalidInput(format!("aqueous molalities must be finite and >= 0: {totals:?}")));
    }
    if !exch.is_valid() {
        return Err(GeochemError::InvalidInput(format!("sorbed amounts must be finite and >= 0: {exch:?}")));
    }
    Ok(())
}

/// Outcome of the checks shared by both solvers.
enum Setup {
    Done(EquilibriumResult),
    Solve { totals: [f64; 3] },
}

fn setup(totals: &AqueousSolution, exch: &ExchangerState, params: &ExchangeParams) -> Result<Setup, GeochemError> {
    validate_inputs(totals, exch, params)?;
    let aq = totals.cations();
    let sorbed = exch.moles();
    let t: [f64; 3] = [0, 1, 2].map(|i| aq[i] + sorbed[i]);
    if t.iter().any(|v| !v.is_finite()) {
        return Err(GeochemError::InvalidInput("system totals are not finite".into()));
    }
    if params.cec == 0.0 {
        return Ok(Setup::Done(EquilibriumResult {
            solution: totals.with_cations(t),
            exchanger: ExchangerState::empty(),
            exchange_activity: 0.0,
            iterations: 0,
            max_residual: 0.0,
            method: SolveMethod::NoExchanger,
        }));
    }
    let available = cation_charge(t);
    if available < params.cec * (1.0 - SATURATION_TOL) {
        return Err(GeochemError::ChargeDeficit { available, capacity: params.cec });
    }
    if available <= params.cec * (1.0 + SATURATION_TOL) {
        return Ok(Setup::Done(EquilibriumResult {
            solution: totals.with_cations([0.0; 3]),
            exchanger: ExchangerState::from_moles(t),
            exchange_activity: f64::INFINITY,
            iterations: 0,
            max_residual: 0.0,
            method: SolveMethod::Saturated,
        }));
    }
    Ok(Setup::Solve { totals: t })
}

/// Assembles a result from aqueous cation molalities; the exchanger takes the
/// remainder of each total so mass balance holds to round-off.
fn finish(
    template: &AqueousSolution,
    totals: [f64; 3],
    m: [f64; 3],
    x: f64,
    iterations: usize,
    method: SolveMethod,
    params: &ExchangeParams,
) -> EquilibriumResult {
    let sorbed = [0, 1, 2].map(|i| (totals[i] - m[i]).max(0.0));
    let solution = template.with_cations(m);
    let exchanger = ExchangerState::from_moles(sorbed);
    let max_residual = mass_action_residuals(&solution, &exchanger, x, params)
        .iter()
        .fold(0.0f64, |a, r| a.max(r.abs()));
    EquilibriumResult { solution, exchanger, exchange_activity: x, iterations, max_residual, method }
}

/// Equilibrates an aqueous solution with an exchanger.
///
/// The system totals (aqueous plus sorbed, per cation) are redistributed so
/// that the mass-action laws hold and the exchanger is exactly full. Anions
/// pass through unchanged. Falls back to [`equilibrate_bruteforce`] when the
/// Newton iteration fails.
pub fn equilibrate(
    totals: &AqueousSolution,
    exch: &ExchangerState,
    params: &ExchangeParams,
) -> Result<EquilibriumResult, GeochemError> {
    let t = match setup(totals, exch, params)? {
        Setup::Done(r) => return Ok(r),
        Setup::Solve { totals } => totals,
    };
    match newton(t, params) {
        Ok((m, x, iterations)) => {
            let r = finish(totals, t, m, x, iterations, SolveMethod::Newton, params);
            if r.max_residual <= RESIDUAL_TOL {
                return Ok(r);
            }
            equilibrate_bruteforce(totals, exch, params)
        }
        Err(GeochemError::NonConvergence { .. }) => equilibrate_bruteforce(totals, exch, params),
        Err(e) => Err(e),
    }
}

/// Newton iteration on `(ln m_i, ln x)` for the cations with a non-zero total.
fn newton(t: [f64; 3], params: &ExchangeParams) -> Result<([f64; 3], f64, usize), GeochemError> {
    let k = params.selectivities();
    let cec = params.cec;
    let active: Vec<usize> = (0..3).filter(|&i| t[i] > 0.0).collect();
    let n = active.len() + 1;

    // mass-action fractions and sorbed moles for aqueous molality m at activity x
    let beta = |i: usize, m: f64, x: f64| k[i] * params.activity_model.activity(m) * x.powi(CATION_CHARGE[i] as i32);
    let eval = |u: &[f64], f: &mut [f64], jac: Option<&mut [f64]>| {
        let x = u[n - 1].exp();
        let mut bsum = 0.0;
        let mut zbsum = 0.0;
        let mut jac = jac;
        for (j, &i) in active.iter().enumerate() {
            let m = u[j].exp();
            let b = beta(i, m, x);
            let s = cec * b / CATION_CHARGE[i];
            f[j] = (m + s - t[i]) / t[i];
            bsum += b;
            zbsum += CATION_CHARGE[i] * b;
            if let Some(jac) = jac.as_deref_mut() {
                for c in 0..n {
                    jac[j * n + c] = 0.0;
                }
                jac[j * n + j] = (m + s) / t[i];
                jac[j * n + n - 1] = CATION_CHARGE[i] * s / t[i];
                jac[(n - 1) * n + j] = b;
            }
        }
        f[n - 1] = bsum - 1.0;
        if let Some(jac) = jac {
            jac[(n - 1) * n + n - 1] = zbsum;
        }
    };
    let norm = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let within = |f: &[f64], tol: f64| f.iter().all(|v| v.abs() <= tol);
    let converged = |f: &[f64]| within(f, POLISH_TOL);
    let solution = |u: &[f64]| {
        let mut m = [0.0; 3];
        for (j, &i) in active.iter().enumerate() {
            m[i] = u[j].exp();
        }
        (m, u[n - 1].exp())
    };

    // Initial guess: leave the surplus charge in solution in proportion to the
    // totals, then solve Σβ = 1 for x with those molalities.
    let available = cation_charge(t);
    let aq_fraction = ((available - cec) / available).clamp(1e-300, 1.0);
    let m0 = t.map(|v| v * aq_fraction);
    let lin: f64 = (0..2).map(|i| k[i] * m0[i]).sum();
    let quad = k[2] * m0[2];
    let x0 = 2.0 / (lin + (lin * lin + 4.0 * quad).sqrt());

    let mut u = vec![0.0; n];
    for (j, &i) in active.iter().enumerate() {
        u[j] = m0[i].ln();
    }
    u[n - 1] = x0.ln();

    let mut f = vec![0.0; n];
    let mut jac = vec![0.0; n * n];
    let mut trial = vec![0.0; n];
    let mut f_trial = vec![0.0; n];
    eval(&u, &mut f, None);
    for iter in 0..NEWTON_MAX_ITER {
        if converged(&f) {
            let (m, x) = solution(&u);
            return Ok((m, x, iter));
        }
        eval(&u, &mut f, Some(&mut jac));
        let mut step: Vec<f64> = f.iter().map(|v| -v).collect();
        if linalg::solve_in_place(&mut jac, &mut step, n).is_none() {
            return Err(GeochemError::NonConvergence { iterations: iter, residual: norm(&f) });
        }
        // keep exp() in range
        let largest = step.iter().fold(0.0f64, |a, s| a.max(s.abs()));
        if largest > 20.0 {
            step.iter_mut().for_each(|s| *s *= 20.0 / largest);
        }
        let current = norm(&f);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=NEWTON_MAX_HALVINGS {
            for c in 0..n {
                trial[c] = u[c] + lambda * step[c];
            }
            eval(&trial, &mut f_trial, None);
            let trial_norm = norm(&f_trial);
            if trial_norm.is_finite() && (trial_norm < current || converged(&f_trial)) {
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            if within(&f, ACCEPT_TOL) {
                let (m, x) = solution(&u);
                return Ok((m, x, iter));
            }
            return Err(GeochemError::NonConvergence { iterations: iter, residual: current });
        }
        u.copy_from_slice(&trial);
        f.copy_from_slice(&f_trial);
    }
    if within(&f, ACCEPT_TOL) {
        let (m, x) = solution(&u);
        return Ok((m, x, NEWTON_MAX_ITER));
    }
    Err(GeochemError::NonConvergence { iterations: NEWTON_MAX_ITER, residual: norm(&f) })
}

/// Equilibrium by bracketing bisection on `ln x`.
///
/// For fixed `x` each mass balance is linear in the aqueous molality, so
/// `m_i(x) = T_i / (1 + cec K_i x^{z_i} / z_i)`, and `Σβ(x)` is monotone
/// increasing. Shares no code with the Newton path beyond input checks.
pub fn equilibrate_bruteforce(
    totals: &AqueousSolution,
    exch: &ExchangerState,
    params: &ExchangeParams,
) -> Result<EquilibriumResult, GeochemError> {
    let t = match setup(totals, exch, params)? {
        Setup::Done(r) => return Ok(r),
        Setup::Solve { totals } => totals,
    };
    let k = params.selectivities();
    let cec = params.cec;
    // mass-action strength y_i = K_i x^{z_i}; written to stay finite as y -> 0 or inf
    let molality = |i: usize, lnx: f64| {
        let y = k[i] * (CATION_CHARGE[i] * lnx).exp();
        t[i] / (1.0 + cec * y / CATION_CHARGE[i])
    };
    let fraction = |i: usize, lnx: f64| {
        if t[i] == 0.0 {
            return 0.0;
        }
        let y = k[i] * (CATION_CHARGE[i] * lnx).exp();
        t[i] / (1.0 / y + cec / CATION_CHARGE[i])
    };
    let g = |lnx: f64| (0..3).map(|i| fraction(i, lnx)).sum::<f64>() - 1.0;

    let mut iterations = 0;
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    let mut width = 1.0;
    if g(0.0) < 0.0 {
        while g(hi) < 0.0 {
            lo = hi;
            hi += width;
            width *= 2.0;
            iterations += 1;
            if iterations > 64 {
                return Err(GeochemError::NonConvergence { iterations, residual: g(hi).abs() });
            }
        }
    } else {
        while g(lo) >= 0.0 {
            hi = lo;
            lo -= width;
            width *= 2.0;
            iterations += 1;
            if iterations > 64 {
                return Err(GeochemError::NonConvergence { iterations, residual: g(lo).abs() });
            }
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lnx = if g(lo).abs() <= g(hi).abs() { lo } else { hi };
    let m = [0, 1, 2].map(|i| molality(i, lnx));
    let r = finish(totals, t, m, lnx.exp(), iterations, SolveMethod::Bisection, params);
    if r.max_residual > RESIDUAL_TOL {
        return Err(GeochemError::NonConvergence { iterations, residual: r.max_residual });
    }
    Ok(r)
}

/// Exchanger composition in equilibrium with a fixed solution, with the
/// exchanger exactly full. The solution itself is not modified, so
/// `equilibrate(solution, result)` is a fixed point.
pub fn exchanger_in_equilibrium(solution: &AqueousSolution, params: &ExchangeParams) -> Result<ExchangerState, GeochemError> {
    params.validate()?;
    if !solution.is_valid() {
        return Err(GeochemError::InvalidInput(format!("aqueous molalities must be finite and >= 0: {solution:?}")));
    }
    if params.cec == 0.0 {
        return Ok(ExchangerState::empty());
    }
    let k = params.selectivities();
    let a = solution.cations().map(|m| params.activity_model.activity(m));
    let lin = k[0] * a[0] + k[1] * a[1];
    let quad = k[2] * a[2];
    if lin == 0.0 && quad == 0.0 {
        return Err(GeochemError::InvalidInput("solution has no exchangeable cations".into()));
    }
    let x = 2.0 / (lin + (lin * lin + 4.0 * quad).sqrt());
    let beta = [k[0] * a[0] * x, k[1] * a[1] * x, k[2] * a[2] * x * x];
    let sum: f64 = beta.iter().sum();
    Ok(ExchangerState::from_moles([0, 1, 2].map(|i| params.cec * beta[i] / sum / CATION_CHARGE[i])))
}
