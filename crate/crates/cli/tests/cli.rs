//! Exit codes, config handling and the smoke pipeline, through the binary.

mod common;

use std::process::Command;

use common::{provlab, run_smoke_pipeline, smoke_separation, step};

/// A run small enough to train in a few seconds.
const TINY: &str = "\
data.base_count = 16
data.source_count = 8
train.base.iterations = 40
train.source.iterations = 80
train.finetune.iterations = 20
suspect.size = 8
keys.count = 4
keys.search.seeds_count = 8
keys.search.iterations = 2
attribution.calibrate = false
experiment.n_values = 2, 4
statistical.shadow_size = 8
statistical.eval_models = 1
";

fn tiny_config(dir: &std::path::Path) -> String {
    let path = dir.join("tiny.conf");
    std::fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_config_key_exits_with_status_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "keys.cuont = 3\n").unwrap();
    let out = provlab(dir.path(), &["--config", path.to_str().unwrap(), "train-source"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown key") && err.contains("keys.cuont"), "{err}");
    assert!(!dir.path().join("objects").exists());
}

#[test]
fn usage_errors_exit_with_status_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(provlab(dir.path(), &["attribute", "instance"]).status.code(), Some(1));
    assert_eq!(provlab(dir.path(), &["select-keys", "best"]).status.code(), Some(1));
    assert_eq!(provlab(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_artifact_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = provlab(dir.path(), &["--config", &cfg, "attribute", "instance", "--suspect", "nothing-here"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn self_attribution_is_infringing_and_sets_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    // output directory taken from the environment
    let out = Command::new(env!("CARGO_BIN_EXE_provlab"))
        .args(["--config", &cfg, "train-source"])
        .env("PROVLAB_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("index.tsv").exists());

    let args = ["--config", &cfg, "attribute", "instance", "--suspect", "source"];
    let summary = step(dir.path(), &args, 0);
    assert!(summary.contains("conf=1.000 verdict=infringing"), "{summary}");
    let flagged = ["--exit-on-infringe", "--config", &cfg, "attribute", "instance", "--suspect", "source"];
    step(dir.path(), &flagged, 2);
}

#[test]
fn rerunning_a_command_reuses_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let first = step(dir.path(), &["--config", &cfg, "train-source"], 0);
    let objects = std::fs::read_dir(dir.path().join("objects")).unwrap().count();
    let second = step(dir.path(), &["--config", &cfg, "train-source"], 0);
    assert_eq!(first, second);
    assert_eq!(std::fs::read_dir(dir.path().join("objects")).unwrap().count(), objects);

    // a different master seed trains a different source
    let other = step(dir.path(), &["--config", &cfg, "--seed", "99", "train-source"], 0);
    assert_ne!(first, other);

    // so does a different training length
    let longer = dir.path().join("longer.conf");
    std::fs::write(&longer, TINY.replace("train.source.iterations = 80", "train.source.iterations = 90")).unwrap();
    let retrained = step(dir.path(), &["--config", longer.to_str().unwrap(), "train-source"], 0);
    assert_ne!(first, retrained);
}

#[test]
fn stored_artifacts_are_addressed_by_their_digest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    step(dir.path(), &["--config", &cfg, "train-source"], 0);
    for entry in std::fs::read_dir(dir.path().join("objects")).unwrap() {
        let path = entry.unwrap().path();
        let stem = path.file_stem().unwrap().to_str().unwrap().to_string();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(provlab::codec::sha256_hex(&bytes), stem);
    }
    // a checkpoint passed by path works like one passed by name
    let index = std::fs::read_to_string(dir.path().join("index.tsv")).unwrap();
    let digest = index
        .lines()
        .find(|l| l.starts_with("source\t"))
        .and_then(|l| l.split('\t').nth(2))
        .unwrap()
        .to_string();
    let path = dir.path().join("objects").join(format!("{digest}.ckpt"));
    let summary = step(
        dir.path(),
        &["--config", &cfg, "attribute", "instance", "--suspect", path.to_str().unwrap()],
        0,
    );
    assert!(summary.contains("conf=1.000"), "{summary}");
}

#[test]
fn smoke_pipeline_separates_infringing_from_innocent() {
    let dir = tempfile::tempdir().unwrap();
    run_smoke_pipeline(dir.path());
    let gap = smoke_separation(dir.path());
    assert!(gap > 0.3, "separation {gap}");
}
