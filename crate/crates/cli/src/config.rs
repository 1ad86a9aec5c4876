//! Experiment configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ionflow_core::dataset::{SamplerKind, N_FEATURES};
use ionflow_core::surrogate::forest::ForestParams;
use ionflow_core::surrogate::tree::TreeParams;
use ionflow_core::{AqueousSolution, CouplingConfig, ExchangeParams, ModelKind, ModelSpec, TransportConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed for samplers and train/test splits unless an entry sets its own.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub transport: TransportConfig,
    pub coupling: CouplingConfig,
    pub exchange: ExchangeParams,
    pub solutions: Solutions,
    pub split: SplitConfig,
    pub samplers: BTreeMap<String, SamplerEntry>,
    pub models: BTreeMap<String, ModelSpec>,
    pub ablation: AblationConfig,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
}

/// Column water at t = 0 and the injected water, mol/kgw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Solutions {
    pub initial: AqueousSolution,
    pub injected: AqueousSolution,
}

impl Default for Solutions {
    fn default() -> Self {
        Self { initial: AqueousSolution::reference_initial(), injected: AqueousSolution::reference_injected() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: None }
    }
}

/// A named sampler. Ranged bounds and covariance moments left unset are taken
/// from the reference simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerEntry {
    pub kind: SamplerKind,
    #[serde(default = "default_rows")]
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_zero_prob")]
    pub zero_prob: f64,
    #[serde(default)]
    pub lo: Option<[f64; N_FEATURES]>,
    #[serde(default)]
    pub hi: Option<[f64; N_FEATURES]>,
    #[serde(default)]
    pub mean: Option<[f64; N_FEATURES]>,
    #[serde(default)]
    pub cov: Option<[[f64; N_FEATURES]; N_FEATURES]>,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_rows() -> usize {
    100_000
}

fn default_zero_prob() -> f64 {
    0.3
}

fn default_attempts() -> usize {
    10_000
}

impl SamplerEntry {
    pub fn of(kind: SamplerKind) -> Self {
        Self {
            kind,
            n: default_rows(),
            seed: None,
            zero_prob: default_zero_prob(),
            lo: None,
            hi: None,
            mean: None,
            cov: None,
            max_attempts: default_attempts(),
        }
    }
}

/// Which coupling corrections a rollout applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Corrections {
    /// No corrections.
    #[default]
    None,
    /// Skip cells already at equilibrium.
    Skip,
    /// Skip plus periodic oracle steps.
    SkipPeriodic,
    /// Skip, periodic oracle steps and charge rescaling.
    All,
    /// Exactly what the `[coupling]` section says.
    Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub sampler: String,
    pub n: usize,
    pub model: String,
    /// Period of the forced oracle steps in the periodic stages.
    pub oracle_period: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { sampler: "vanilla_zeros".into(), n: 100_000, model: "gbdt_residual".into(), oracle_period: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub samplers: Vec<String>,
    pub sizes: Vec<usize>,
    pub model: String,
    pub corrections: Corrections,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            samplers: vec!["vanilla".into(), "vanilla_zeros".into(), "ranged_zeros".into()],
            sizes: vec![4_000, 20_000, 100_000],
            model: "gbdt_residual".into(),
            corrections: Corrections::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    pub repeats: usize,
    /// Inputs equilibrated per oracle timing repeat.
    pub oracle_batch: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { batch_sizes: vec![1, 10, 100, 1_000, 10_000], repeats: 100, oracle_batch: 1_000 }
    }
}

fn default_samplers() -> BTreeMap<String, SamplerEntry> {
    [
        ("vanilla", SamplerKind::Vanilla),
        ("vanilla_zeros", SamplerKind::VanillaZeros),
        ("ranged", SamplerKind::Ranged),
        ("ranged_zeros", SamplerKind::RangedZeros),
        ("covariance", SamplerKind::Covariance),
    ]
    .into_iter()
    .map(|(name, kind)| (name.to_string(), SamplerEntry::of(kind)))
    .collect()
}

fn default_models() -> BTreeMap<String, ModelSpec> {
    let tree = TreeParams { max_depth: Some(12), min_samples_leaf: 2, max_features: None };
    let forest = ForestParams { n_trees: 50, max_depth: Some(12), ..Default::default() };
    [
        ("linear", ModelSpec::new(ModelKind::Linear, false)),
        ("decision_tree", ModelSpec::new(ModelKind::DecisionTree(tree), false)),
        ("random_forest", ModelSpec::new(ModelKind::RandomForest(forest), false)),
        ("gbdt", ModelSpec::gbdt(false)),
        ("gbdt_residual", ModelSpec::gbdt(true)),
        ("mlp", ModelSpec::mlp(false)),
        ("mlp_residual", ModelSpec::mlp(true)),
    ]
    .into_iter()
    .map(|(name, spec)| (name.to_string(), spec))
    .collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            transport: TransportConfig::default(),
            coupling: CouplingConfig::default(),
            exchange: ExchangeParams::default(),
            solutions: Solutions::default(),
            split: SplitConfig::default(),
            samplers: default_samplers(),
            models: default_models(),
            ablation: AblationConfig::default(),
            sweep: SweepConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// SHA-256 over the canonical JSON form of the resolved configuration.
    /// The output directory is left out: it does not change any result.
    pub fn digest(&self) -> String {
        let canonical = Self { out_dir: PathBuf::new(), ..self.clone() };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.seed)
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.transport.validate().context("[transport]")?;
        self.coupling.validate().context("[coupling]")?;
        self.exchange.validate().context("[exchange]")?;
        for (name, s) in [("initial", &self.solutions.initial), ("injected", &self.solutions.injected)] {
            ensure!(s.is_valid(), "[solutions.{name}] needs finite non-negative molalities");
        }
        let f = self.split.train_fraction;
        ensure!(f > 0.0 && f < 1.0, "[split] train_fraction must lie in (0, 1), got {f}");
        for (name, e) in &self.samplers {
            ensure!((0.0..=1.0).contains(&e.zero_prob), "[samplers.{name}] zero_prob must lie in [0, 1]");
            ensure!(e.max_attempts > 0, "[samplers.{name}] max_attempts must be >= 1");
            if let (Some(lo), Some(hi)) = (e.lo, e.hi) {
                ensure!(
                    lo.iter().zip(&hi).all(|(l, h)| *l >= 0.0 && h >= l),
                    "[samplers.{name}] needs 0 <= lo <= hi"
                );
            }
            if e.mean.is_some() != e.cov.is_some() {
                bail!("[samplers.{name}] mean and cov must be given together");
            }
        }
        for (name, m) in &self.models {
            m.validate().with_context(|| format!("[models.{name}]"))?;
        }
        self.sampler(&self.ablation.sampler).context("[ablation]")?;
        self.model(&self.ablation.model).context("[ablation]")?;
        ensure!(self.ablation.oracle_period >= 1, "[ablation] oracle_period must be >= 1");
        for s in &self.sweep.samplers {
            self.sampler(s).context("[sweep]")?;
        }
        self.model(&self.sweep.model).context("[sweep]")?;
        ensure!(self.bench.repeats >= 1, "[bench] repeats must be >= 1");
        Ok(())
    }

    pub fn sampler(&self, name: &str) -> Result<&SamplerEntry> {
        self.samplers.get(name).with_context(|| {
            format!("unknown sampler {name:?}; known: {}", self.samplers.keys().cloned().collect::<Vec<_>>().join(", "))
        })
    }

    pub fn model(&self, name: &str) -> Result<&ModelSpec> {
        self.models.get(name).with_context(|| {
            format!("unknown model {name:?}; known: {}", self.models.keys().cloned().collect::<Vec<_>>().join(", "))
        })
    }

    /// Coupling settings for a correction stage.
    pub fn coupling_for(&self, corrections: Corrections) -> CouplingConfig {
        let base = CouplingConfig {
            skip_equilibrium: false,
            oracle_period: None,
            charge_rescale: false,
            backend: ionflow_core::BackendKind::Surrogate,
            ..self.coupling.clone()
        };
        let period = Some(self.ablation.oracle_period);
        match corrections {
            Corrections::None => base,
            Corrections::Skip => CouplingConfig { skip_equilibrium: true, ..base },
            Corrections::SkipPeriodic => CouplingConfig { skip_equilibrium: true, oracle_period: period, ..base },
            Corrections::All => {
                CouplingConfig { skip_equilibrium: true, oracle_period: period, charge_rescale: true, ..base }
            }
            Corrections::Config => self.coupling.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn partial_file_is_defaulted() {
        let cfg: ExperimentConfig = toml::from_str("seed = 7\n[transport]\nn_cells = 20\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.transport.n_cells, 20);
        assert_eq!(cfg.exchange, ExchangeParams::default());
        assert_ne!(cfg.digest(), ExperimentConfig::default().digest());
    }

    #[test]
    fn validation_catches_dangling_names() {
        let mut cfg = ExperimentConfig::default();
        cfg.ablation.model = "nope".into();
        let msg = format!("{:#}", cfg.validate().unwrap_err());
        assert!(msg.contains("unknown model"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("sede = 1\n").is_err());
    }
}
