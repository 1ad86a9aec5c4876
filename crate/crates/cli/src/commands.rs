//! Subcommand implementations.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ionflow_core::{ChemistryBackend, Dataset, TrainedModel};
use serde_json::json;

use crate::config::{Corrections, ExperimentConfig};
use crate::experiments::{breakthrough, BenchRow, Lab, RolloutRow, SweepRow};
use crate::render;

#[derive(Debug, Parser)]
#[command(name = "ionflow", version, about = "Reactive-transport surrogate experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample and label a dataset.
    Generate {
        /// Sampler name from the configuration.
        #[arg(long, default_value = "vanilla")]
        sampler: String,
        /// Row count, overriding the sampler entry.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a model on a dataset file and report held-out errors.
    Train {
        /// Model name from the configuration.
        #[arg(long, default_value = "gbdt_residual")]
        model: String,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run the oracle reference and optionally a surrogate rollout.
    Rollout {
        #[arg(long, value_parser = ["oracle", "surrogate"], default_value = "oracle")]
        backend: String,
        /// Model file; required for the surrogate backend.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Corrections::All)]
        corrections: Corrections,
    },
    /// Correction ablation for a model, optionally followed by the dataset sweep.
    Ablate {
        /// Model file; trained from the `[ablation]` section when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also run the sampler and dataset-size sweep.
        #[arg(long)]
        sweep: bool,
    },
    /// Prediction timing for models and the equilibrium solver.
    Bench {
        /// Model files to time.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
    },
    /// Render columns of a CSV file as an SVG line chart.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "pore_volumes")]
        x: String,
        /// Comma-separated y columns.
        #[arg(long, value_delimiter = ',', default_value = "na_out,k_out,ca_out")]
        y: Vec<String>,
        #[arg(long)]
        log_y: bool,
        #[arg(long)]
        title: Option<String>,
        /// SVG path; defaults to the input path with an .svg extension.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config,
}

/// Failure category used in the one-line error message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Run,
}

impl ErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Io => "io",
            ErrorKind::Run => "run",
        }
    }

    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Io => 3,
            ErrorKind::Run => 1,
        }
    }
}

#[derive(Debug)]
pub struct CommandError {
    pub kind: ErrorKind,
    pub error: anyhow::Error,
}

impl CommandError {
    /// `error kind=<kind> msg="<chain>"` on a single line.
    pub fn one_line(&self) -> String {
        let msg = format!("{:#}", self.error).replace(['\n', '\r'], " ").replace('"', "'");
        format!("error kind={} msg=\"{msg}\"", self.kind.name())
    }
}

fn tag<T>(kind: ErrorKind, r: Result<T>) -> Result<T, CommandError> {
    r.map_err(|error| {
        let kind = if kind == ErrorKind::Run && error.chain().any(|e| e.is::<std::io::Error>()) { ErrorKind::Io } else { kind };
        CommandError { kind, error }
    })
}

pub fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(".ionflow.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("output directory {} is in use (remove {} if stale)", dir.display(), path.display())
            }
            Err(e) => Err(e).with_context(|| format!("cannot create {}", path.display())),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Everything a command writes, recorded with the config digest.
struct Outputs {
    dir: PathBuf,
    digest: String,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn path(&mut self, sub: &str, name: &str) -> Result<PathBuf> {
        let d = self.dir.join(sub);
        fs::create_dir_all(&d).with_context(|| format!("cannot create {}", d.display()))?;
        let p = d.join(name);
        self.written.push(p.clone());
        Ok(p)
    }

    fn write_lines(&mut self, sub: &str, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<PathBuf> {
        let p = self.path(sub, name)?;
        let mut w = BufWriter::new(File::create(&p).with_context(|| format!("cannot create {}", p.display()))?);
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
        Ok(p)
    }

    fn write_json(&mut self, sub: &str, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
        let p = self.path(sub, name)?;
        fs::write(&p, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("cannot write {}", p.display()))?;
        Ok(p)
    }

    fn finish(self, command: &str) -> Result<()> {
        let line = json!({
            "command": command,
            "config_digest": self.digest,
            "outputs": self.written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join("manifest.jsonl"))?;
        writeln!(f, "{line}")?;
        Ok(())
    }
}

fn load_model(path: &Path) -> Result<Arc<TrainedModel>> {
    Ok(Arc::new(TrainedModel::load(path).with_context(|| format!("cannot load model {}", path.display()))?))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

/// Runs one parsed invocation. Messages for the user go to `log`.
pub fn run(cli: &Cli, log: &mut dyn Write) -> Result<(), CommandError> {
    let cfg = tag(ErrorKind::Config, resolve_config(&cli.common))?;
    match &cli.command {
        Command::Config => tag(ErrorKind::Io, (|| Ok(write!(log, "{}", cfg.to_toml()?)?))()),
        Command::Render { input, x, y, log_y, title, output } => tag(ErrorKind::Run, (|| {
            let text = fs::read_to_string(input).with_context(|| format!("cannot read {}", input.display()))?;
            let table = render::Table::parse(&text)?;
            let ys: Vec<&str> = y.iter().map(String::as_str).collect();
            let title = title.clone().unwrap_or_else(|| stem(input));
            let svg = render::line_chart(&table, x, &ys, *log_y, &title)?;
            let out = output.clone().unwrap_or_else(|| input.with_extension("svg"));
            fs::write(&out, svg).with_context(|| format!("cannot write {}", out.display()))?;
            writeln!(log, "wrote {}", out.display())?;
            Ok(())
        })()),
        cmd => {
            let lab = tag(ErrorKind::Config, Lab::new(cfg.clone()))?;
            let _lock = tag(ErrorKind::Io, OutputLock::acquire(&cfg.out_dir))?;
            let mut out = Outputs { dir: cfg.out_dir.clone(), digest: cfg.digest(), written: Vec::new() };
            let name = tag(ErrorKind::Run, run_experiment(&lab, cmd, &mut out, log))?;
            tag(ErrorKind::Io, out.finish(name))
        }
    }
}

fn run_experiment(lab: &Lab, cmd: &Command, out: &mut Outputs, log: &mut dyn Write) -> Result<&'static str> {
    let cfg = &lab.cfg;
    match cmd {
        Command::Generate { sampler, n } => {
            let ds = lab.generate(sampler, *n)?;
            if ds.is_empty() {
                writeln!(log, "warning: dataset {} has no rows", ds.provenance.id)?;
            }
            let p = out.path("datasets", &format!("{}.csv", ds.provenance.id))?;
            ds.write(&p)?;
            out.written.push(Dataset::sidecar_path(&p));
            writeln!(log, "wrote {} ({} rows, {} dropped)", p.display(), ds.len(), ds.provenance.dropped_rows)?;
            Ok("generate")
        }
        Command::Train { model, dataset } => {
            let spec = cfg.model(model)?.clone();
            let ds = Dataset::read(dataset).with_context(|| format!("cannot read dataset {}", dataset.display()))?;
            let t = lab.train(&spec, &ds)?;
            let mp = out.path("models", &format!("{model}.json"))?;
            t.model.save(&mp)?;
            let rp = out.path("reports", &format!("{model}-held-out.csv"))?;
            t.report.write_csv(BufWriter::new(File::create(&rp)?))?;
            out.write_json(
                "reports",
                &format!("{model}-held-out.json"),
                &json!({
                    "model": model,
                    "dataset": ds.provenance.id,
                    "residual_connection": spec.residual_connection,
                    "n_train": t.n_train,
                    "n_test": t.n_test,
                    "fit_seconds": t.fit_seconds,
                    "report": t.report,
                }),
            )?;
            writeln!(
                log,
                "{model}: held-out rmse {:.4e} r2 {} ({} train / {} test rows, {:.1} s) -> {}",
                t.report.pooled.rmse,
                t.report.pooled.r2.map_or("n/a".into(), |r| format!("{r:.5}")),
                t.n_train,
                t.n_test,
                t.fit_seconds,
                mp.display()
            )?;
            Ok("train")
        }
        Command::Rollout { backend, model, corrections } => {
            let reference = lab.reference()?;
            let p = out.path("rollouts", "oracle.csv")?;
            reference.write_csv(BufWriter::new(File::create(&p)?))?;
            let b = breakthrough(reference, cfg.solutions.initial.na);
            out.write_json("rollouts", "oracle-breakthrough.json", &serde_json::to_value(&b)?)?;
            writeln!(log, "oracle reference: {} steps -> {}", reference.len(), p.display())?;
            if backend == "surrogate" {
                let mp = model.as_ref().context("--model is required with --backend surrogate")?;
                let m = load_model(mp)?;
                let ccfg = cfg.coupling_for(*corrections);
                let r = lab.rollout(&ccfg, &ChemistryBackend::Surrogate(m))?;
                let name = format!("{}-{}", stem(mp), serde_json::to_value(corrections)?.as_str().unwrap_or("custom"));
                let p = out.path("rollouts", &format!("{name}.csv"))?;
                r.write_csv(BufWriter::new(File::create(&p)?))?;
                let row = lab.score(&name, &r)?;
                out.write_lines("rollouts", &format!("{name}-error.csv"), RolloutRow::CSV_HEADER, [row.csv()])?;
                writeln!(log, "{name}: rollout error {:.4e} (outflow {:.4e}) -> {}", row.error, row.outflow_error, p.display())?;
            }
            Ok("rollout")
        }
        Command::Ablate { model, sweep } => {
            let m = match model {
                Some(p) => load_model(p)?,
                None => {
                    let a = &cfg.ablation;
                    writeln!(log, "training {} on {} rows of {}", a.model, a.n, a.sampler)?;
                    let ds = lab.generate(&a.sampler, Some(a.n))?;
                    lab.train(cfg.model(&a.model)?, &ds)?.model
                }
            };
            let rows = lab.ablation(&m)?;
            for r in &rows {
                writeln!(log, "{:>9}: rollout error {:.4e}", r.name, r.error)?;
            }
            out.write_lines("ablation", "corrections.csv", RolloutRow::CSV_HEADER, rows.iter().map(RolloutRow::csv))?;
            if *sweep {
                let rows = lab.sweep(|r| {
                    let _ = writeln!(log, "{:>14} n={:<7} rollout error {:.4e}", r.sampler, r.n, r.rollout_error);
                })?;
                out.write_lines("ablation", "sampling.csv", SweepRow::CSV_HEADER, rows.iter().map(SweepRow::csv))?;
            }
            Ok("ablate")
        }
        Command::Bench { models } => {
            let loaded: Vec<(String, Arc<TrainedModel>)> =
                models.iter().map(|p| Ok((stem(p), load_model(p)?))).collect::<Result<_>>()?;
            let rows = lab.bench(&loaded)?;
            for r in &rows {
                writeln!(
                    log,
                    "{:>14} batch {:>6}: {:.3e} s/call, {:.3e} s/instance",
                    r.name, r.timing.batch_size, r.timing.mean_seconds, r.timing.per_instance_seconds
                )?;
            }
            out.write_lines("bench", "timing.csv", BenchRow::CSV_HEADER, rows.iter().map(BenchRow::csv))?;
            Ok("bench")
        }
        Command::Render { .. } | Command::Config => unreachable!("handled without an experiment"),
    }
}
