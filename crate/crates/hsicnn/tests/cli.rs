//! End-to-end tests of the command-line binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hsicnn")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("HSICNN_DATA_DIR", dir)
        .output()
        .expect("spawn hsicnn")
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("hsicnn_cli_tests").join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).expect("clear test dir");
    }
    std::fs::create_dir_all(&dir).expect("create test dir");
    dir
}

fn write_tiny_train_config(dir: &Path) {
    std::fs::write(
        dir.join("tiny.cfg"),
        "conv1_kernel_depth=6\nconv1_stride=2\nconv1_kernels=8\nconv2_kernels=8\n\
         fc1_nodes=32\nfc2_nodes=16\nlearning_rate=0.05\nbatch_size=16\n\
         max_iterations=150\neval_every=50\nseed=7\n",
    )
    .expect("write config");
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Runs the documented pipeline in `dir` and returns eval's stdout.
fn run_pipeline(dir: &Path) -> String {
    let synth = run_in(
        dir,
        &[
            "synth", "--classes", "3", "--bands", "16", "--size", "16", "--noise", "0.1",
            "--seed", "7",
        ],
    );
    assert!(synth.status.success(), "synth failed: {}", stderr(&synth));

    let prepare = run_in(dir, &["prepare", "--split", "0.8", "--seed", "7"]);
    assert!(prepare.status.success(), "prepare failed: {}", stderr(&prepare));
    for file in ["prepared.hsic", "split.txt", "run.manifest"] {
        assert!(dir.join(file).exists(), "{file} missing after prepare");
    }

    write_tiny_train_config(dir);
    let train = run_in(dir, &["train", "--config", "tiny.cfg"]);
    assert!(train.status.success(), "train failed: {}", stderr(&train));
    assert!(dir.join("model.ckpt").exists());
    assert!(dir.join("history.csv").exists());

    let eval = run_in(dir, &["eval", "--out", "metrics.csv"]);
    assert!(eval.status.success(), "eval failed: {}", stderr(&eval));
    assert!(dir.join("metrics.csv").exists());

    let map = run_in(dir, &["map", "--mode", "labeled-only"]);
    assert!(map.status.success(), "map failed: {}", stderr(&map));
    assert!(dir.join("map.ppm").exists());

    let export = run_in(dir, &["export-features", "--layer", "fc2", "--set", "test"]);
    assert!(export.status.success(), "export failed: {}", stderr(&export));
    assert!(dir.join("features.csv").exists());

    stdout(&eval)
}

#[test]
fn documented_pipeline_runs_end_to_end() {
    let dir = fresh_dir("pipeline");
    let eval_out = run_pipeline(&dir);
    assert!(
        eval_out.contains("overall accuracy"),
        "eval output missing OA line:\n{eval_out}"
    );

    // The tiny scene is separable, so the trained model should be sharp.
    let oa_line = eval_out
        .lines()
        .find(|l| l.starts_with("overall accuracy"))
        .expect("OA line");
    let oa: f64 = oa_line
        .split_whitespace()
        .nth(3)
        .expect("OA value")
        .parse()
        .expect("parse OA");
    assert!(oa > 0.9, "unexpectedly poor OA on the tiny scene: {oa}");

    // History CSV has the documented header and a final row at 150.
    let history = std::fs::read_to_string(dir.join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("iteration,loss,train_acc,test_acc"));
    assert!(history.lines().last().unwrap().starts_with("150,"));

    // Feature rows: sample, class, then the 16 fc2 columns.
    let features = std::fs::read_to_string(dir.join("features.csv")).unwrap();
    let header = features.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 2 + 16);
}

#[test]
fn identical_seeds_produce_identical_artifacts() {
    let a = fresh_dir("determinism_a");
    let b = fresh_dir("determinism_b");
    run_pipeline(&a);
    run_pipeline(&b);
    for file in ["model.ckpt", "history.csv", "metrics.csv", "map.ppm", "features.csv", "split.txt"]
    {
        let bytes_a = std::fs::read(a.join(file)).unwrap();
        let bytes_b = std::fs::read(b.join(file)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{file} differs between identical runs");
    }
}

#[test]
fn eval_without_checkpoint_names_the_missing_file() {
    let dir = fresh_dir("missing_ckpt");
    let synth = run_in(dir.as_path(), &["synth", "--classes", "3", "--bands", "8", "--size", "8"]);
    assert!(synth.status.success());
    let prepare = run_in(dir.as_path(), &["prepare"]);
    assert!(prepare.status.success());
    let eval = run_in(dir.as_path(), &["eval"]);
    assert!(!eval.status.success());
    let msg = stderr(&eval);
    assert!(msg.contains("model.ckpt"), "message does not name the file: {msg}");
}

#[test]
fn unknown_flags_and_commands_print_usage() {
    let dir = fresh_dir("usage");
    let bad_flag = run_in(dir.as_path(), &["synth", "--bogus", "1"]);
    assert_eq!(bad_flag.status.code(), Some(2));
    assert!(stderr(&bad_flag).contains("hsicnn <command>"));

    let bad_cmd = run_in(dir.as_path(), &["frobnicate"]);
    assert_eq!(bad_cmd.status.code(), Some(2));
    assert!(stderr(&bad_cmd).contains("unknown command"));
}

#[test]
fn prepare_refuses_mismatched_scene_dimensions() {
    let dir = fresh_dir("mismatch");
    let synth = run_in(dir.as_path(), &["synth", "--classes", "3", "--bands", "8", "--size", "8"]);
    assert!(synth.status.success());
    // Overwrite the labels with a differently sized raster.
    let other = fresh_dir("mismatch_other");
    let synth2 = run_in(
        other.as_path(),
        &["synth", "--classes", "3", "--bands", "8", "--size", "12"],
    );
    assert!(synth2.status.success());
    std::fs::copy(other.join("labels.pgm"), dir.join("labels.pgm")).unwrap();

    let prepare = run_in(dir.as_path(), &["prepare"]);
    assert!(!prepare.status.success());
    assert!(stderr(&prepare).contains("labels"), "{}", stderr(&prepare));
    // Nothing was written.
    assert!(!dir.join("prepared.hsic").exists());
    assert!(!dir.join("split.txt").exists());
}

#[test]
fn gradcheck_command_passes_and_reports() {
    let dir = fresh_dir("gradcheck");
    let out = run_in(dir.as_path(), &["gradcheck", "--seed", "6"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("overall max rel err"), "{text}");
    assert!(text.contains("PASS"), "{text}");
}
