//! End-to-end command tests through the real binary: exit codes, artifact
//! presence, and determinism.

mod common;

use std::path::Path;
use std::process::Command;

use common::{tiny_config, write_toy_dataset};

fn mef(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mef"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_exit(output: &std::process::Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn full_pipeline_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_dataset(dir.path(), 4, 2, 48, 7, &tiny_config(7));
    let cfg = config.to_str().unwrap();

    let out = mef(&["search", "--config", cfg], dir.path());
    assert_exit(&out, 0);
    for artifact in [
        "out/architecture.json",
        "out/loss_weights.json",
        "out/prune_log.ndjson",
        "out/history.csv",
    ] {
        assert!(dir.path().join(artifact).is_file(), "{artifact} missing");
    }

    let train_started = std::time::Instant::now();
    let out = mef(&["train", "--config", cfg], dir.path());
    assert_exit(&out, 0);
    assert!(
        train_started.elapsed() < std::time::Duration::from_secs(60),
        "toy training exceeded its time budget"
    );
    assert!(dir.path().join("out/model.mefc").is_file());
    assert!(dir
        .path()
        .join("out/checkpoints/epoch_0001.mefc")
        .is_file());

    let out = mef(&["fuse", "--config", cfg], dir.path());
    assert_exit(&out, 0);
    let fused = dir.path().join("out/fused/eval00.png");
    assert!(fused.is_file());
    let img = image::open(&fused).unwrap();
    assert_eq!((img.width(), img.height()), (48, 48));

    let out = mef(&["eval", "--config", cfg], dir.path());
    assert_exit(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    let aggregate = report["aggregate"].as_object().unwrap();
    for name in ["sd", "vif", "cc", "tmqi", "ms_ssim", "mef_ssim", "en", "qabf"] {
        assert!(aggregate.contains_key(name), "{name} missing from report");
    }
    assert!(dir.path().join("out/report.csv").is_file());
}

#[test]
fn fuse_explicit_pair_mode_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_dataset(dir.path(), 4, 1, 24, 8, &tiny_config(8));
    let cfg = config.to_str().unwrap();
    assert_exit(&mef(&["search", "--config", cfg], dir.path()), 0);
    assert_exit(&mef(&["train", "--config", cfg], dir.path()), 0);

    let args = [
        "fuse",
        "--config",
        cfg,
        "--under",
        "pairs/eval00_u.png",
        "--over",
        "pairs/eval00_o.png",
        "--out",
        "fused_a.png",
    ];
    assert_exit(&mef(&args, dir.path()), 0);
    let mut args_b = args;
    args_b[8] = "fused_b.png";
    assert_exit(&mef(&args_b, dir.path()), 0);
    let a = std::fs::read(dir.path().join("fused_a.png")).unwrap();
    let b = std::fs::read(dir.path().join("fused_b.png")).unwrap();
    assert_eq!(a, b, "fuse must be byte-deterministic");
}

#[test]
fn search_is_byte_deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_dataset(dir.path(), 4, 1, 24, 9, &tiny_config(9));
    let cfg = config.to_str().unwrap();
    assert_exit(
        &mef(&["search", "--config", cfg, "--set", "paths.output_dir=o1"], dir.path()),
        0,
    );
    assert_exit(
        &mef(&["search", "--config", cfg, "--set", "paths.output_dir=o2"], dir.path()),
        0,
    );
    for name in ["architecture.json", "loss_weights.json", "history.csv", "prune_log.ndjson"] {
        let a = std::fs::read(dir.path().join("o1").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("o2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn missing_natural_pool_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_dataset(dir.path(), 2, 1, 24, 10, &tiny_config(10));
    // Remove the pool path from the config.
    let body = std::fs::read_to_string(&config)
        .unwrap()
        .replace("natural_pool = \"pool.txt\"\n", "");
    std::fs::write(&config, body).unwrap();
    let out = mef(&["search", "--config", config.to_str().unwrap()], dir.path());
    assert_exit(&out, 2);
}

#[test]
fn corrupted_architecture_fails_train_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_dataset(dir.path(), 4, 1, 24, 11, &tiny_config(11));
    let cfg = config.to_str().unwrap();
    assert_exit(&mef(&["search", "--config", cfg], dir.path()), 0);
    std::fs::write(dir.path().join("out/architecture.json"), "{ not json").unwrap();
    let out = mef(&["train", "--config", cfg], dir.path());
    assert_exit(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("architecture.json"), "{stderr}");
}

#[test]
fn missing_checkpoint_fails_fuse_with_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_dataset(dir.path(), 2, 1, 24, 12, &tiny_config(12));
    let out = mef(&["fuse", "--config", config.to_str().unwrap()], dir.path());
    assert_exit(&out, 1);
}

#[test]
fn eval_without_fused_images_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_dataset(dir.path(), 2, 1, 24, 13, &tiny_config(13));
    let out = mef(&["eval", "--config", config.to_str().unwrap()], dir.path());
    assert_exit(&out, 1);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mef(&["bogus"], dir.path());
    assert_exit(&out, 2);
}
