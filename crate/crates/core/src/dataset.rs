//! Training data for the chemistry surrogates.
//!
//! Inputs are sampled directly in feature space and labelled with the
//! equilibrium solver; the coupled simulation is never used to produce rows.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{self, ChemistryBackend, CouplingConfig, CouplingError};
use crate::geochem::{self, AqueousSolution, ExchangeParams, ExchangerState};
use crate::linalg;
use crate::transport::{self, TransportConfig};

pub const N_FEATURES: usize = 6;
pub const N_TARGETS: usize = 3;

/// Aqueous Na/K/Ca followed by sorbed NaX/KX/CaX2, mol/kgw.
pub type FeatureVector = [f64; N_FEATURES];
/// Equilibrated aqueous Na/K/Ca, mol/kgw.
pub type TargetVector = [f64; N_TARGETS];

pub const FEATURE_NAMES: [&str; N_FEATURES] = ["na_in", "k_in", "ca_in", "nax", "kx", "cax2"];
pub const TARGET_NAMES: [&str; N_TARGETS] = ["na_out", "k_out", "ca_out"];

/// Upper bound of every feature for the uniform sampler, mol/kgw.
pub const VANILLA_HI: f64 = 0.0015;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid sampler spec: {0}")]
    InvalidSpec(String),
    #[error("row {row}: no acceptable draw after {attempts} attempts")]
    RejectionOverflow { row: usize, attempts: usize },
    #[error("dataset file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Uniform on one fixed range for all features.
    Vanilla,
    /// Uniform on per-feature ranges seen in a reference simulation.
    Ranged,
    VanillaZeros,
    RangedZeros,
    /// Truncated multivariate normal.
    Covariance,
}

impl SamplerKind {
    pub fn enforces_zeros(self) -> bool {
        matches!(self, SamplerKind::VanillaZeros | SamplerKind::RangedZeros)
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Vanilla => "vanilla",
            SamplerKind::Ranged => "ranged",
            SamplerKind::VanillaZeros => "vanilla_zeros",
            SamplerKind::RangedZeros => "ranged_zeros",
            SamplerKind::Covariance => "covariance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub n: usize,
    pub seed: u64,
    /// Per-feature bounds; every sampled value lies in `[lo, hi]`.
    pub lo: [f64; N_FEATURES],
    pub hi: [f64; N_FEATURES],
    /// Probability that a row gets some of its aqueous cations forced to zero.
    pub zero_prob: f64,
    pub mean: Option<[f64; N_FEATURES]>,
    pub cov: Option<[[f64; N_FEATURES]; N_FEATURES]>,
    /// Sampled exchanger triples are rescaled to hold exactly this many equivalents.
    pub exchange_capacity: f64,
    /// Draws attempted per row before giving up.
    pub max_attempts: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Vanilla,
            n: 100_000,
            seed: 0,
            lo: [0.0; N_FEATURES],
            hi: [VANILLA_HI; N_FEATURES],
            zero_prob: 0.3,
            mean: None,
            cov: None,
            exchange_capacity: ExchangeParams::default().cec,
            max_attempts: 10_000,
        }
    }
}

impl SamplerSpec {
    pub fn vanilla(n: usize, seed: u64) -> Self {
        Self { n, seed, ..Self::default() }
    }

    pub fn vanilla_zeros(n: usize, seed: u64) -> Self {
        Self { kind: SamplerKind::VanillaZeros, ..Self::vanilla(n, seed) }
    }

    pub fn ranged(n: usize, seed: u64, lo: [f64; N_FEATURES], hi: [f64; N_FEATURES]) -> Self {
        Self { kind: SamplerKind::Ranged, lo, hi, ..Self::vanilla(n, seed) }
    }

    pub fn ranged_zeros(n: usize, seed: u64, lo: [f64; N_FEATURES], hi: [f64; N_FEATURES]) -> Self {
        Self { kind: SamplerKind::RangedZeros, ..Self::ranged(n, seed, lo, hi) }
    }

    pub fn covariance(n: usize, seed: u64, mean: [f64; N_FEATURES], cov: [[f64; N_FEATURES]; N_FEATURES]) -> Self {
        Self {
            kind: SamplerKind::Covariance,
            hi: [f64::INFINITY; N_FEATURES],
            mean: Some(mean),
            cov: Some(cov),
            ..Self::vanilla(n, seed)
        }
    }

    pub fn id(&self) -> String {
        format!("{}-n{}-seed{}", self.kind.name(), self.n, self.seed)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        for j in 0..N_FEATURES {
            if !(self.lo[j] >= 0.0 && self.hi[j] >= self.lo[j]) || self.lo[j].is_nan() || self.hi[j].is_nan() {
                return bad(format!("feature {} needs 0 <= lo <= hi, got [{}, {}]", FEATURE_NAMES[j], self.lo[j], self.hi[j]));
            }
            if self.kind != SamplerKind::Covariance && !self.hi[j].is_finite() {
                return bad(format!("feature {} needs a finite upper bound", FEATURE_NAMES[j]));
            }
        }
        if !(0.0..=1.0).contains(&self.zero_prob) {
            return bad(format!("zero_prob must lie in [0, 1], got {}", self.zero_prob));
        }
        if self.kind.enforces_zeros() && self.lo[..3].iter().any(|&v| v > 0.0) {
            return bad("zero enforcement needs lo = 0 for the aqueous cations".into());
        }
        if !(self.exchange_capacity.is_finite() && self.exchange_capacity > 0.0) {
            return bad(format!("exchange_capacity must be positive, got {}", self.exchange_capacity));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be >= 1".into());
        }
        if self.kind == SamplerKind::Covariance {
            let (Some(mean), Some(cov)) = (&self.mean, &self.cov) else {
                return bad("covariance sampler needs mean and cov".into());
            };
            if mean.iter().any(|v| !v.is_finite()) {
                return bad("mean must be finite".into());
            }
            for i in 0..N_FEATURES {
                for j in 0..N_FEATURES {
                    if !cov[i][j].is_finite() || (cov[i][j] - cov[j][i]).abs() > 1e-12 * cov[i][i].abs().max(cov[j][j].abs()) {
                        return bad("cov must be finite and symmetric".into());
                    }
                }
            }
            if linalg::cholesky_psd(&cov.concat(), N_FEATURES).is_none() {
                return bad("cov must be positive semi-definite".into());
            }
        }
        Ok(())
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub id: String,
    pub sampler: Option<SamplerSpec>,
    pub params: Option<ExchangeParams>,
    /// Rows dropped because the equilibrium solver failed on them.
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<FeatureVector>,
    pub targets: Vec<TargetVector>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: rows.iter().map(|&r| self.features[r]).collect(),
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Path of the provenance record written next to a dataset file.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    /// Writes the comma-separated rows and the provenance sidecar.
    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(FEATURE_NAMES.iter().chain(TARGET_NAMES.iter()))?;
        for (f, t) in self.features.iter().zip(&self.targets) {
            w.write_record(f.iter().chain(t).map(|v| v.to_string()))?;
        }
        w.flush()?;
        let meta = BufWriter::new(File::create(Self::sidecar_path(path))?);
        serde_json::to_writer_pretty(meta, &self.provenance).map_err(|e| DatasetError::Format(e.to_string()))?;
        Ok(())
    }

    /// Reads a dataset file; the provenance sidecar is optional.
    pub fn read(path: &Path) -> Result<Dataset, DatasetError> {
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let expected: Vec<&str> = FEATURE_NAMES.iter().chain(TARGET_NAMES.iter()).copied().collect();
        if header != expected {
            return Err(DatasetError::Format(format!("unexpected header {header:?}")));
        }
        let mut ds = Dataset::default();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut vals = [0.0; N_FEATURES + N_TARGETS];
            for (v, field) in vals.iter_mut().zip(rec.iter()) {
                *v = field.trim().parse().map_err(|_| DatasetError::Format(format!("row {}: bad number {field:?}", i + 1)))?;
            }
            let mut f = [0.0; N_FEATURES];
            let mut t = [0.0; N_TARGETS];
            f.copy_from_slice(&vals[..N_FEATURES]);
            t.copy_from_slice(&vals[N_FEATURES..]);
            ds.features.push(f);
            ds.targets.push(t);
        }
        let sidecar = Self::sidecar_path(path);
        if sidecar.exists() {
            let meta = BufReader::new(File::open(sidecar)?);
            ds.provenance = serde_json::from_reader(meta).map_err(|e| DatasetError::Format(e.to_string()))?;
        }
        Ok(ds)
    }
}

fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

fn draw_row(spec: &SamplerSpec, chol: Option<&[f64]>, row: usize) -> Result<FeatureVector, DatasetError> {
    let mut rng = row_rng(spec.seed, row);
    let cec = spec.exchange_capacity;
    for _ in 0..spec.max_attempts {
        let mut x = [0.0; N_FEATURES];
        match chol {
            Some(l) => {
                let mean = spec.mean.expect("validated");
                let z: [f64; N_FEATURES] = std::array::from_fn(|_| rng.sample(StandardNormal));
                for i in 0..N_FEATURES {
                    x[i] = mean[i] + (0..=i).map(|k| l[i * N_FEATURES + k] * z[k]).sum::<f64>();
                }
                if (0..N_FEATURES).any(|j| x[j] < spec.lo[j] || x[j] > spec.hi[j]) {
                    continue;
                }
            }
            None => {
                for j in 0..N_FEATURES {
                    x[j] = if spec.hi[j] > spec.lo[j] { rng.gen_range(spec.lo[j]..=spec.hi[j]) } else { spec.lo[j] };
                }
            }
        }
        let eq = x[3] + x[4] + 2.0 * x[5];
        if !(eq > 0.0) {
            continue;
        }
        let scale = cec / eq;
        for v in &mut x[3..] {
            *v *= scale;
        }
        if (3..N_FEATURES).any(|j| x[j] < spec.lo[j] || x[j] > spec.hi[j]) {
            continue;
        }
        if spec.kind.enforces_zeros() && rng.gen::<f64>() < spec.zero_prob {
            // non-empty subset of the aqueous cations
            let mask = rng.gen_range(1u8..8);
            for j in 0..3 {
                if mask & (1 << j) != 0 {
                    x[j] = 0.0;
                }
            }
        }
        return Ok(x);
    }
    Err(DatasetError::RejectionOverflow { row, attempts: spec.max_attempts })
}

/// Draws `spec.n` feature vectors. Each row has its own random stream, so the
/// result does not depend on how rows are scheduled.
pub fn sample(spec: &SamplerSpec) -> Result<Vec<FeatureVector>, DatasetError> {
    spec.validate()?;
    let chol = match (spec.kind, &spec.cov) {
        (SamplerKind::Covariance, Some(cov)) => linalg::cholesky_psd(&cov.concat(), N_FEATURES),
        _ => None,
    };
    (0..spec.n).into_par_iter().map(|row| draw_row(spec, chol.as_deref(), row)).collect()
}

/// Labels inputs with the equilibrium solver. Rows the solver rejects are
/// dropped and counted.
pub fn label(inputs: &[FeatureVector], params: &ExchangeParams) -> Dataset {
    let labelled: Vec<Option<TargetVector>> = inputs
        .par_iter()
        .map(|f| {
            let aq = AqueousSolution::new(f[0], f[1], f[2], 0.0, 0.0);
            let ex = ExchangerState::new(f[3], f[4], f[5]);
            geochem::equilibrate(&aq, &ex, params).ok().map(|r| r.solution.cations())
        })
        .collect();
    let mut ds = Dataset::default();
    for (f, t) in inputs.iter().zip(labelled) {
        match t {
            Some(t) => {
                ds.features.push(*f);
                ds.targets.push(t);
            }
            None => ds.provenance.dropped_rows += 1,
        }
    }
    ds.provenance.params = Some(*params);
    ds
}

/// Samples and labels in one go.
pub fn generate(spec: &SamplerSpec, params: &ExchangeParams) -> Result<Dataset, DatasetError> {
    let inputs = sample(spec)?;
    let mut ds = label(&inputs, params);
    ds.provenance.id = spec.id();
    ds.provenance.sampler = Some(spec.clone());
    Ok(ds)
}

/// Shuffled train/test split; the first `round(train_fraction · n)` shuffled rows train.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ds.len() as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut train = ds.subset(&order[..n_train]);
    let mut test = ds.subset(&order[n_train..]);
    train.provenance.id = format!("{}/train", ds.provenance.id);
    test.provenance.id = format!("{}/test", ds.provenance.id);
    (train, test)
}

/// Feature statistics of the chemistry inputs seen in a reference simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub n_rows: usize,
    pub min: [f64; N_FEATURES],
    pub max: [f64; N_FEATURES],
    pub mean: [f64; N_FEATURES],
    pub cov: [[f64; N_FEATURES]; N_FEATURES],
}

/// Runs the equilibrium-solver simulation and collects the per-cell inputs of
/// every chemistry step.
pub fn reference_stats(
    tcfg: &TransportConfig,
    params: &ExchangeParams,
    initial: &AqueousSolution,
    injected: &AqueousSolution,
) -> Result<ReferenceStats, DatasetError> {
    tcfg.validate().map_err(CouplingError::from)?;
    let mut state = coupling::initial_column(tcfg, params, initial, injected)
        .map_err(|source| CouplingError::Chemistry { step: 0, cell: 0, source })?;
    let ccfg = CouplingConfig { record_fields: false, ..CouplingConfig::default() };
    let dt = tcfg.time_step();
    let mut rows: Vec<FeatureVector> = Vec::new();
    for step in 1..=tcfg.n_steps() {
        let moved = transport::advect_step(&state, tcfg, dt).map_err(CouplingError::from)?;
        rows.extend(moved.cells.iter().map(coupling::features_of));
        state = coupling::chemistry_step(&moved, &ccfg, params, step, &ChemistryBackend::Oracle)?.0;
    }
    let n = rows.len().max(1) as f64;
    let mut min = [f64::INFINITY; N_FEATURES];
    let mut max = [f64::NEG_INFINITY; N_FEATURES];
    let mut mean = [0.0; N_FEATURES];
    for r in &rows {
        for j in 0..N_FEATURES {
            min[j] = min[j].min(r[j]);
            max[j] = max[j].max(r[j]);
            mean[j] += r[j] / n;
        }
    }
    let mut cov = [[0.0; N_FEATURES]; N_FEATURES];
    for r in &rows {
        for i in 0..N_FEATURES {
            for j in 0..N_FEATURES {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1.0).max(1.0);
            }
        }
    }
    for i in 0..N_FEATURES {
        for j in 0..i {
            let avg = 0.5 * (cov[i][j] + cov[j][i]);
            cov[i][j] = avg;
            cov[j][i] = avg;
        }
    }
    Ok(ReferenceStats { n_rows: rows.len(), min, max, mean, cov })
}

impl ReferenceStats {
    /// Uniform bounds `[0, max]` per feature.
    pub fn ranged_bounds(&self) -> ([f64; N_FEATURES], [f64; N_FEATURES]) {
        ([0.0; N_FEATURES], self.max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sample() {
        assert!(sample(&SamplerSpec::vanilla(0, 1)).unwrap().is_empty());
    }

    #[test]
    fn vanilla_rows_are_in_range_and_exchanger_full() {
        let spec = SamplerSpec::vanilla(2000, 7);
        for r in sample(&spec).unwrap() {
            assert!(r.iter().all(|v| (0.0..=VANILLA_HI).contains(v)));
            let eq = r[3] + r[4] + 2.0 * r[5];
            assert!((eq - spec.exchange_capacity).abs() <= 1e-15 * spec.exchange_capacity * 4.0);
        }
    }

    #[test]
    fn sampling_is_reproducible_per_row() {
        let a = sample(&SamplerSpec::vanilla_zeros(500, 3)).unwrap();
        let b = sample(&SamplerSpec::vanilla_zeros(500, 3)).unwrap();
        assert_eq!(a, b);
        // a longer run extends the shorter one
        let c = sample(&SamplerSpec::vanilla_zeros(800, 3)).unwrap();
        assert_eq!(&c[..500], &a[..]);
        assert_ne!(a, sample(&SamplerSpec::vanilla_zeros(500, 4)).unwrap());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(SamplerSpec { zero_prob: 1.5, ..SamplerSpec::vanilla(1, 0) }.validate().is_err());
        assert!(SamplerSpec { hi: [-1.0; 6], ..SamplerSpec::vanilla(1, 0) }.validate().is_err());
        let mut cov = [[0.0; 6]; 6];
        cov[0][1] = 1.0;
        cov[1][0] = 1.0;
        assert!(SamplerSpec::covariance(1, 0, [1e-3; 6], cov).validate().is_err());
        assert!(SamplerSpec { kind: SamplerKind::Covariance, ..SamplerSpec::vanilla(1, 0) }.validate().is_err());
    }

    #[test]
    fn infeasible_covariance_overflows() {
        let mut cov = [[0.0; 6]; 6];
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = 1e-12;
        }
        let spec = SamplerSpec { max_attempts: 50, ..SamplerSpec::covariance(3, 0, [-1.0; 6], cov) };
        assert!(matches!(sample(&spec), Err(DatasetError::RejectionOverflow { .. })));
    }

    #[test]
    fn label_without_exchanger_is_identity() {
        let p = ExchangeParams { cec: 0.0, ..Default::default() };
        let inputs = [[1e-3, 2e-4, 3e-4, 0.0, 0.0, 0.0]];
        let ds = label(&inputs, &p);
        assert_eq!(ds.targets[0], [1e-3, 2e-4, 3e-4]);
    }

    #[test]
    fn split_sizes_and_reproducibility() {
        let ds = Dataset {
            features: (0..10).map(|i| [i as f64; 6]).collect(),
            targets: (0..10).map(|i| [i as f64; 3]).collect(),
            provenance: Provenance::default(),
        };
        let (a, b) = split(&ds, 0.8, 1);
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, _) = split(&ds, 0.8, 1);
        assert_eq!(a.features, a2.features);
        let (a3, _) = split(&ds, 0.8, 2);
        assert_ne!(a.features, a3.features);
        let mut all: Vec<f64> = a.features.iter().chain(&b.features).map(|f| f[0]).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = generate(&SamplerSpec::vanilla(20, 1), &ExchangeParams::default()).unwrap();
        ds.write(&path).unwrap();
        let back = Dataset::read(&path).unwrap();
        assert_eq!(back, ds);
    }
}
