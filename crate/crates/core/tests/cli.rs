use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn probekit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probekit"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PROBEKIT_SEED")
        .env_remove("PROBEKIT_RUN_DIR")
        .output()
        .unwrap()
}

fn small_world(dir: &Path) -> PathBuf {
    std::fs::write(
        dir.join("fixture.toml"),
        "seed = 7\nn_pairs = 20\nn_layers = 3\nhidden_dim = 8\nsignal_layer = 1\n",
    )
    .unwrap();
    let out = probekit(&["fixtures", "--out", "world", "--config", "fixture.toml"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("world").join("probekit.toml")
}

#[test]
fn full_pipeline_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_world(dir.path());
    let cfg = cfg.to_str().unwrap();
    for args in [
        vec!["validate", cfg],
        vec!["probe", cfg],
        vec!["analyze", cfg],
        vec!["psycholing", cfg, "--emit-prompts"],
        vec!["report", cfg],
    ] {
        let out = probekit(&args, dir.path());
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let run = dir.path().join("world/run");
    for f in [
        "probe/base.csv",
        "probe/chat.json",
        "analysis/curves.csv",
        "analysis/saturation.csv",
        "analysis/ttests.csv",
        "analysis/stouffer.csv",
        "analysis/analysis.json",
        "analysis/plots/scatter.svg",
        "psycholing/accuracy.csv",
        "psycholing/comparison.csv",
        "psycholing/prompts/base.jsonl",
        "report.md",
        "report.json",
        "manifest.json",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let probe = std::fs::read_to_string(run.join("probe/base.csv")).unwrap();
    // 6 tasks x 3 layers plus header
    assert_eq!(probe.lines().count(), 19);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["files"].to_string().contains("report.md"));
}

#[test]
fn probe_resumes_from_existing_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_world(dir.path());
    let cfg = cfg.to_str().unwrap();
    assert!(probekit(&["probe", cfg], dir.path()).status.success());
    let table = dir.path().join("world/run/probe/base.csv");
    let first = std::fs::read(&table).unwrap();
    assert!(probekit(&["probe", cfg], dir.path()).status.success());
    assert_eq!(std::fs::read(&table).unwrap(), first);
}

#[test]
fn missing_store_is_a_data_error_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_world(dir.path());
    std::fs::remove_file(dir.path().join("world/chat.mps")).unwrap();
    let out = probekit(&["probe", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("world/run/probe").exists());
}

#[test]
fn corrupt_store_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_world(dir.path());
    let store = dir.path().join("world/base.mps");
    let mut bytes = std::fs::read(&store).unwrap();
    let n = bytes.len();
    bytes[n - 10] ^= 0x55;
    std::fs::write(&store, bytes).unwrap();
    let out = probekit(&["validate", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(probekit(&["frobnicate"], dir.path()).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.toml"), "seed = 1\nnot_a_field = true\n").unwrap();
    assert_eq!(probekit(&["validate", "bad.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(probekit(&["validate", "absent.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(probekit(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn analyze_before_probe_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_world(dir.path());
    let out = probekit(&["analyze", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn env_override_changes_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_world(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_probekit"))
        .args(["probe", cfg.to_str().unwrap()])
        .env("PROBEKIT_SEED", "99")
        .env("PROBEKIT_RUN_DIR", dir.path().join("other"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("other/probe/base.csv")).unwrap();
    assert!(table.lines().nth(1).unwrap().contains(",99,"));
}
