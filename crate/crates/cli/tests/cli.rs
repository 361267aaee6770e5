//! Behavioural tests for the command-line runner.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathlattice"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn entropy_config(out: &Path, seed: u64) -> String {
    format!(
        r#"
experiment = "entropy"
seed = {seed}

[sim]
d = 1
n = 2
steps = 20
replicas = 200

[drift]
name = "constant"
c = 0.5

[initial]
kind = "gaussian_product"
mean = 0.0
variance = 1.0

[output]
dir = "{}"
"#,
        out.display()
    )
}

#[test]
fn experiment_kind_must_match_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "e.toml", &entropy_config(&dir.path().join("out"), 1));
    let out = run(&["dlr", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("entropy"), "{msg}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let body = entropy_config(&dir.path().join("out"), 1).replace("[sim]", "typo = 3\n\n[sim]");
    let cfg = write_config(dir.path(), "bad.toml", &body);
    let out = run(&["entropy", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn missing_experiment_block_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = entropy_config(&dir.path().join("out"), 1).replace(
        "experiment = \"entropy\"",
        "experiment = \"dlr\"",
    );
    let cfg = write_config(dir.path(), "nodlr.toml", &body);
    let out = run(&["dlr", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("[dlr]"), "{msg}");
}

#[test]
fn adversarial_drift_fails_verification_with_a_counterexample() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let body = format!(
        r#"
experiment = "verify_drift"
seed = 5

[sim]
d = 1
n = 1
replicas = 1

[drift]
name = "non_local_probe"

[initial]
kind = "dirac"
value = 0.0

[output]
dir = "{}"

[verify]
trials = 500
"#,
        out_dir.display()
    );
    let cfg = write_config(dir.path(), "probe.toml", &body);
    let out = run(&["verify-drift", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(4), "{out:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("verify.json")).unwrap()).unwrap();
    let checks = report["report"].as_array().unwrap();
    let local = checks.iter().find(|c| c["check"] == "locality").unwrap();
    assert_eq!(local["passed"], false);
    assert!(local["counterexample"].is_string());
    let adapted = checks.iter().find(|c| c["check"] == "adaptedness").unwrap();
    assert_eq!(adapted["passed"], true);
}

#[test]
fn seed_override_changes_hash_and_results() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let cfg = write_config(dir.path(), "e.toml", &entropy_config(&out_a, 9));
    let first = run(&["entropy", "--config", &cfg]);
    assert_eq!(first.status.code(), Some(0), "{first:?}");
    let second = run(&[
        "entropy",
        "--config",
        &cfg,
        "--seed",
        "10",
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert_eq!(second.status.code(), Some(0), "{second:?}");
    let a: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("entropy.json")).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_b.join("entropy.json")).unwrap()).unwrap();
    assert_ne!(a["config_hash"], b["config_hash"]);
    assert_eq!(a["seed"], 9);
    assert_eq!(b["seed"], 10);
    assert_ne!(
        a["report"]["direct"]["mean"],
        b["report"]["direct"]["mean"]
    );
}

#[test]
fn simulate_manifest_lists_every_replica_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sim");
    let body = format!(
        r#"
experiment = "simulate"
seed = 3

[sim]
d = 1
n = 1
steps = 10
replicas = 5

[drift]
name = "zero"

[initial]
kind = "dirac"
value = 0.0

[output]
dir = "{}"
"#,
        out_dir.display()
    );
    let cfg = write_config(dir.path(), "sim.toml", &body);
    let out = run(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 5);
    for f in files {
        assert!(out_dir.join(f.as_str().unwrap()).is_file());
    }
    assert!(manifest["config_hash"].is_string());
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["weight_norm"], "sup");
}
