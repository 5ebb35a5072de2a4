//! Helpers for driving the `provlab` binary.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use provlab::evalharness::RhoSweep;
use provlab::keyselect::Strategy;
use provlab_cli::store::ArtifactStore;

pub fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.conf")
}

/// Runs the binary with `--out dir` and `args`.
pub fn provlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_provlab"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env_remove("PROVLAB_OUT")
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

/// Runs one step and fails loudly unless it exits with `code`.
pub fn step(dir: &Path, args: &[&str], code: i32) -> String {
    let out = provlab(dir, args);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert_eq!(
        out.status.code(),
        Some(code),
        "provlab {args:?}\nstdout:\n{stdout}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

/// Every command of the tool, in pipeline order, on the smoke config.
pub fn run_smoke_pipeline(dir: &Path) {
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let steps: &[&[&str]] = &[
        &["train-source"],
        &["select-keys", "detect"],
        &["select-keys", "generate"],
        &["select-keys", "random"],
        &["build-suspect"],
        &["build-suspect", "--rho", "0"],
        &["attribute", "instance", "--suspect", "suspect-rho1-0"],
        &["attribute", "instance", "--suspect", "suspect-rho0-0"],
        &["attribute", "statistical", "--suspect", "suspect-rho1-0"],
        &["experiment", "rho-sweep"],
        &["experiment", "n-sweep"],
        &["experiment", "delta0-table"],
        &["experiment", "statistical-eval"],
    ];
    for args in steps {
        let mut full = vec!["--config", cfg];
        full.extend_from_slice(args);
        step(dir, &full, 0);
    }
}

/// Mean conf of infringing minus innocent suspects in the stored rho sweep,
/// for the configured key strategy.
pub fn smoke_separation(dir: &Path) -> f64 {
    let store = ArtifactStore::open(dir).unwrap();
    let (_, bytes) = store.get_named("rho-sweep-models").unwrap().expect("rho sweep stored");
    let sweep: RhoSweep = serde_json::from_slice(&bytes).unwrap();
    let mean = |infringing: bool| {
        let confs: Vec<f64> = sweep
            .models
            .iter()
            .filter(|m| m.strategy == Strategy::Detect && (m.rho > 0.0) == infringing)
            .map(|m| m.conf)
            .collect();
        assert!(!confs.is_empty());
        confs.iter().sum::<f64>() / confs.len() as f64
    };
    mean(true) - mean(false)
}

/// Relative path and bytes of every file under `root`, sorted.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).unwrap();
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}
