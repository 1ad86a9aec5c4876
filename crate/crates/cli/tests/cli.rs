//! End-to-end runs of the `ionflow` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ionflow(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ionflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(dir.join("manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn generate_is_reproducible_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let o = ionflow(&["generate", "--sampler", "vanilla_zeros", "--n", "300"], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let file = "datasets/vanilla_zeros-n300-seed42.csv";
    assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap());
    let (ma, mb) = (manifest(a.path()), manifest(b.path()));
    assert_eq!(ma.len(), 1);
    assert_eq!(ma[0]["config_digest"], mb[0]["config_digest"]);
    assert_eq!(ma[0]["command"], "generate");
    assert!(!a.path().join(".ionflow.lock").exists());
}

#[test]
fn empty_dataset_has_only_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let o = ionflow(&["generate", "--n", "0"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("no rows") || String::from_utf8_lossy(&o.stdout).contains("no rows"));
    let text = fs::read_to_string(dir.path().join("datasets/vanilla-n0-seed42.csv")).unwrap();
    assert_eq!(text, "na_in,k_in,ca_in,nax,kx,cax2,na_out,k_out,ca_out\n");
}

#[test]
fn seed_override_changes_the_dataset_id() {
    let dir = tempfile::tempdir().unwrap();
    let o = ionflow(&["generate", "--n", "10", "--seed", "7"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("datasets/vanilla-n10-seed7.csv").exists());
}

#[test]
fn train_then_surrogate_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let o = ionflow(&["generate", "--sampler", "vanilla_zeros", "--n", "2000"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let ds = dir.path().join("datasets/vanilla_zeros-n2000-seed42.csv");
    let o = ionflow(&["train", "--model", "linear", "--dataset", ds.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let model = dir.path().join("models/linear.json");
    assert!(model.exists());
    assert!(dir.path().join("reports/linear-held-out.csv").exists());

    let o = ionflow(&["rollout", "--backend", "surrogate", "--model", model.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let oracle = fs::read_to_string(dir.path().join("rollouts/oracle.csv")).unwrap();
    let surrogate = fs::read_to_string(dir.path().join("rollouts/linear-all.csv")).unwrap();
    assert_eq!(oracle.lines().count(), surrogate.lines().count());
    assert!(dir.path().join("rollouts/linear-all-error.csv").exists());
    let commands: Vec<_> = manifest(dir.path()).iter().map(|l| l["command"].as_str().unwrap().to_string()).collect();
    assert_eq!(commands, ["generate", "train", "rollout"]);
}

#[test]
fn surrogate_rollout_needs_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = ionflow(&["rollout", "--backend", "surrogate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--model is required"));
}

#[test]
fn bad_configuration_is_one_line_and_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nno_such_key = 3\n").unwrap();
    let o = ionflow(&["--config", cfg.to_str().unwrap(), "generate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=config msg="), "{err}");

    fs::write(&cfg, "[transport]\ncfl = 1.5\n").unwrap();
    let o = ionflow(&["--config", cfg.to_str().unwrap(), "generate"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = ionflow(&["--config", "/nonexistent/cfg.toml", "config"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn printed_configuration_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = ionflow(&["config", "--seed", "5"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let printed = String::from_utf8(o.stdout).unwrap();
    let cfg = dir.path().join("printed.toml");
    fs::write(&cfg, &printed).unwrap();
    let again = ionflow(&["--config", cfg.to_str().unwrap(), "config"], dir.path());
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(String::from_utf8(again.stdout).unwrap(), printed);
}

#[test]
fn busy_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(".ionflow.lock"), "1\n").unwrap();
    let o = ionflow(&["generate", "--n", "5"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("in use"), "{}", stderr(&o));
    assert!(!dir.path().join("datasets").exists());
}

#[test]
fn render_writes_an_svg() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    fs::write(&csv, "pore_volumes,na_out,k_out,ca_out\n0,1e-3,2e-4,0\n1,5e-4,1.2e-3,0\n2,0,1.2e-3,6e-4\n").unwrap();
    let o = ionflow(&["render", "--input", csv.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = fs::read_to_string(dir.path().join("curve.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

    let o = ionflow(&["render", "--input", csv.to_str().unwrap(), "--y", "missing"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no column"));
}
