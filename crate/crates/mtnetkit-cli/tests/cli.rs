//! End-to-end tests that drive the compiled `mtnetkit` binary the way a
//! shell user would: tiny synthetic sequences, real subprocesses, and
//! assertions on exit codes, stdout, and the files left behind.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::tempdir;

const BIN: &str = env!("CARGO_BIN_EXE_mtnetkit");

/// A run configuration small enough that a whole track finishes in well
/// under a second: 8-channel features, 32/64 px crops, a 1-layer fusion.
const TINY_RUN: &str = r#"{
  "backbone": {"channels": 8, "template_size": 32, "search_size": 64},
  "fusion": {"dim": 8, "heads": 2, "layers": 1}
}"#;

/// Five 96x96 frames with a slowly drifting 28 px target.
const TINY_SYNTH: &str = r#"{
  "frames": 5, "width": 96, "height": 96,
  "target_w": 28.0, "target_h": 28.0,
  "start_cx": 48.0, "start_cy": 48.0,
  "vel_x": 0.5, "noise_rgb": 2.0, "noise_thermal": 2.0,
  "seed": 11
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary spawns")
}

fn run_with_env(args: &[&str], key: &str, val: &str) -> Output {
    Command::new(BIN).args(args).env(key, val).output().expect("binary spawns")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is UTF-8")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is UTF-8")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Writes the tiny synth config and generates a sequence under `dir/seq`.
fn make_tiny_sequence(dir: &Path) {
    let cfg = dir.join("synth.json");
    fs::write(&cfg, TINY_SYNTH).unwrap();
    let seq = dir.join("seq");
    let out = run(&["synth", "--out", seq.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "synth failed: {}", stderr_of(&out));
}

/// Tracks `dir/seq` with the tiny run config into `dir/<name>`.
fn track_tiny(dir: &Path, name: &str) -> Output {
    let cfg = dir.join("run.json");
    fs::write(&cfg, TINY_RUN).unwrap();
    run(&[
        "track",
        dir.join("seq").to_str().unwrap(),
        "--out",
        dir.join(name).to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ])
}

#[test]
fn synth_writes_sequence_files_and_echoes_seed() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    fs::write(&cfg, TINY_SYNTH).unwrap();
    let seq = dir.path().join("seq");
    let out = run(&["synth", "--out", seq.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("seed 11"), "stdout: {text}");
    assert!(text.contains("wrote 5 frame pairs"), "stdout: {text}");

    let gt = fs::read_to_string(seq.join("groundtruth.txt")).unwrap();
    assert_eq!(gt.lines().count(), 5);
    for t in 0..5 {
        assert!(seq.join(format!("rgb/{t:06}.ppm")).is_file());
        assert!(seq.join(format!("thermal/{t:06}.pgm")).is_file());
    }
    assert!(!seq.join("rgb/000005.ppm").exists());
}

#[test]
fn track_writes_results_and_state_log_and_reruns_are_byte_identical() {
    let dir = tempdir().unwrap();
    make_tiny_sequence(dir.path());

    let out = track_tiny(dir.path(), "run_a");
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("tracked 5 frames"), "stdout: {text}");

    let results = fs::read_to_string(dir.path().join("run_a/results.txt")).unwrap();
    assert_eq!(results.lines().count(), 5);
    for line in results.lines() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 4, "row: {line}");
        for f in &fields {
            f.parse::<f64>().expect("numeric box field");
            assert!(f.contains('.'), "two-decimal formatting: {line}");
        }
    }

    let log: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run_a/state_log.json")).unwrap())
            .unwrap();
    assert_eq!(log["seed"], 42, "default seed is echoed");
    let frames = log["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 5);
    // The init frame echoes the given box; every later frame scores the full
    // 8x8 proposal grid of the 64-px search crop.
    assert_eq!(frames[0]["proposals"], 0);
    for f in &frames[1..] {
        assert_eq!(f["proposals"], 64);
    }
    for f in frames {
        assert!(f["confidence"].as_f64().unwrap().is_finite());
    }

    let rerun = track_tiny(dir.path(), "run_b");
    assert_eq!(exit_code(&rerun), 0);
    let results_b = fs::read(dir.path().join("run_b/results.txt")).unwrap();
    assert_eq!(fs::read(dir.path().join("run_a/results.txt")).unwrap(), results_b);
    let log_b = fs::read(dir.path().join("run_b/state_log.json")).unwrap();
    assert_eq!(fs::read(dir.path().join("run_a/state_log.json")).unwrap(), log_b);
}

#[test]
fn eval_reports_scores_and_saves_report_json() {
    let dir = tempdir().unwrap();
    make_tiny_sequence(dir.path());
    let out = track_tiny(dir.path(), "run");
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let gt = dir.path().join("seq/groundtruth.txt");
    let results = dir.path().join("run/results.txt");
    let report_dir = dir.path().join("eval");
    let out = run(&[
        "eval",
        "--gt",
        gt.to_str().unwrap(),
        "--results",
        results.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let report: Value = serde_json::from_str(&stdout_of(&out)).expect("stdout is a JSON report");
    for key in ["pr", "sr", "npr"] {
        let v = report["overall"][key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert_eq!(report["overall"]["frames"], 5);
    // Frame 0 echoes the ground-truth box exactly, so no score can be zero.
    assert!(report["overall"]["pr"].as_f64().unwrap() > 0.0);

    let saved = fs::read_to_string(report_dir.join("report.json")).unwrap();
    let saved: Value = serde_json::from_str(&saved).unwrap();
    assert_eq!(saved, report, "file and stdout carry the same report");
}

#[test]
fn curves_writes_full_resolution_csvs() {
    let dir = tempdir().unwrap();
    make_tiny_sequence(dir.path());
    let out = track_tiny(dir.path(), "run");
    assert_eq!(exit_code(&out), 0);

    let curves_dir = dir.path().join("curves");
    let out = run(&[
        "curves",
        "--gt",
        dir.path().join("seq/groundtruth.txt").to_str().unwrap(),
        "--results",
        dir.path().join("run/results.txt").to_str().unwrap(),
        "--out",
        curves_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    // Header plus one row per threshold: 51 center-error thresholds,
    // 21 IoU thresholds, 101 normalized-error thresholds.
    for (file, lines) in
        [("precision.csv", 52), ("success.csv", 22), ("norm_precision.csv", 102)]
    {
        let text = fs::read_to_string(curves_dir.join(file)).unwrap();
        assert_eq!(text.lines().count(), lines, "{file}");
        assert_eq!(text.lines().next().unwrap(), "threshold,fraction", "{file}");
    }
}

#[test]
fn eval_scores_thirty_pixel_offsets_as_zero_precision() {
    let dir = tempdir().unwrap();
    let gt = dir.path().join("gt.txt");
    let pred = dir.path().join("pred.txt");
    fs::write(&gt, "10,10,40,40\n20,20,40,40\n30,30,40,40\n").unwrap();
    fs::write(&pred, "40,40,40,40\n50,50,40,40\n60,60,40,40\n").unwrap();
    let out =
        run(&["eval", "--gt", gt.to_str().unwrap(), "--results", pred.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let report: Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    // Center error is 30*sqrt(2) > 20 px on every frame.
    assert_eq!(report["overall"]["pr"].as_f64().unwrap(), 0.0);
    // The boxes still overlap slightly, so success is small but nonzero.
    let sr = report["overall"]["sr"].as_f64().unwrap();
    assert!(sr > 0.0 && sr < 0.1, "sr = {sr}");
}

#[test]
fn eval_rejects_row_count_mismatch() {
    let dir = tempdir().unwrap();
    let gt = dir.path().join("gt.txt");
    let pred = dir.path().join("pred.txt");
    fs::write(&gt, "10,10,40,40\n20,20,40,40\n30,30,40,40\n").unwrap();
    fs::write(&pred, "10,10,40,40\n20,20,40,40\n").unwrap();
    let out =
        run(&["eval", "--gt", gt.to_str().unwrap(), "--results", pred.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("error:"));
}

#[test]
fn eval_rejects_negative_tau_as_usage() {
    let dir = tempdir().unwrap();
    let gt = dir.path().join("gt.txt");
    fs::write(&gt, "10,10,40,40\n").unwrap();
    let out = run(&[
        "eval",
        "--gt",
        gt.to_str().unwrap(),
        "--results",
        gt.to_str().unwrap(),
        "--tau",
        "-3",
    ]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn misspelled_config_key_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"sead": 7}"#).unwrap();

    let out = run(&[
        "synth",
        "--out",
        dir.path().join("seq").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));

    // track validates its config before touching the sequence directory.
    let out = run(&[
        "track",
        dir.path().join("nonexistent").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
}

#[test]
fn missing_sequence_directory_is_a_failure() {
    let dir = tempdir().unwrap();
    let out = run(&[
        "track",
        dir.path().join("nonexistent").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1, "stderr: {}", stderr_of(&out));
}

#[test]
fn gradcheck_small_run_passes() {
    let out = run(&["gradcheck", "--trials", "5", "--seed", "7"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(stdout_of(&out).contains("PASS"));
}

#[test]
fn gradcheck_rejects_zero_trials() {
    let out = run(&["gradcheck", "--trials", "0"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("--trials"));
}

#[test]
fn statecheck_passes() {
    let out = run(&["statecheck"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(stdout_of(&out).contains("PASS"));
}

#[test]
fn worker_env_must_be_a_positive_integer() {
    let out = run_with_env(&["gradcheck", "--trials", "1"], "MTNETKIT_THREADS", "abc");
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("MTNETKIT_THREADS"));

    let out = run_with_env(&["gradcheck", "--trials", "1"], "MTNETKIT_THREADS", "0");
    assert_eq!(exit_code(&out), 2);

    let out = run_with_env(&["gradcheck", "--trials", "1"], "MTNETKIT_THREADS", "2");
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
}

#[test]
fn worker_count_does_not_change_tracking_output() {
    let dir = tempdir().unwrap();
    make_tiny_sequence(dir.path());
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, TINY_RUN).unwrap();

    let mut bytes = Vec::new();
    for (name, threads) in [("one", "1"), ("four", "4")] {
        let out = run_with_env(
            &[
                "track",
                dir.path().join("seq").to_str().unwrap(),
                "--out",
                dir.path().join(name).to_str().unwrap(),
                "--config",
                cfg.to_str().unwrap(),
            ],
            "MTNETKIT_THREADS",
            threads,
        );
        assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
        assert!(stdout_of(&out).contains(&format!("workers {threads}")));
        bytes.push((
            fs::read(dir.path().join(name).join("results.txt")).unwrap(),
            fs::read(dir.path().join(name).join("state_log.json")).unwrap(),
        ));
    }
    assert_eq!(bytes[0], bytes[1], "outputs are identical for any worker count");
}
