//! End-to-end tests of the command-line harness: artifact layout, config
//! precedence, determinism, exit codes, and the warning paths.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conformal-kan"))
}

fn write_tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(
        &path,
        "ensemble_size = 2\n\
         epochs = 25\n\
         train_size = 40\n\
         cal_size = 60\n\
         test_size = 80\n\
         subdomains = [2]\n\
         kan_widths = [1, 3, 1]\n\
         member_widths = [1, 3, 1]\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_code(output: &Output, want: i32) {
    assert_eq!(
        output.status.code(),
        Some(want),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn experiment_runs_are_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    for out in [&out_a, &out_b] {
        let output = run(&[
            "experiment",
            "exp1",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_code(&output, 0);
    }

    // both model kinds, both interval kinds
    let results = fs::read_to_string(out_a.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 5);
    assert!(results.starts_with("model,intervals_kind,"));
    assert_eq!(results.matches("\nkan,").count(), 2);
    assert_eq!(results.matches("\nfbkan,").count(), 2);

    for stem in ["exp1_kan", "exp1_fbkan"] {
        assert!(out_a.join(format!("{stem}_manifest.json")).exists());
        assert!(out_a.join(format!("{stem}_member_0.json")).exists());
        assert!(out_a.join(format!("{stem}_member_1.json")).exists());
        assert!(out_a.join(format!("{stem}_calibration.json")).exists());
        assert!(out_a.join(format!("{stem}_per_point.csv")).exists());
        assert!(out_a.join(format!("{stem}_history_0.csv")).exists());
        assert!(out_a.join(format!("{stem}_config.toml")).exists());
    }

    // byte-identical artifacts across reruns
    for name in ["results.csv", "exp1_kan_per_point.csv", "exp1_kan_member_0.json"] {
        assert_eq!(
            fs::read(out_a.join(name)).unwrap(),
            fs::read(out_b.join(name)).unwrap(),
            "rerun changed {name}"
        );
    }
}

#[test]
fn train_calibrate_evaluate_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap().to_string();

    let output = run(&[
        "train",
        "--experiment",
        "exp1",
        "--model",
        "kan",
        "--config",
        &config,
        "--out",
        &out_s,
    ]);
    assert_code(&output, 0);
    let manifest = out.join("exp1_kan_manifest.json");
    assert!(manifest.exists());
    assert!(out.join("exp1_kan_history_1.csv").exists());
    let history = fs::read_to_string(out.join("exp1_kan_history_0.csv")).unwrap();
    assert!(history.starts_with("epoch,total,mse\n"));
    assert_eq!(history.lines().count(), 27); // header + initial loss + 25 epochs

    let output = run(&[
        "calibrate",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        &config,
        "--out",
        &out_s,
    ]);
    assert_code(&output, 0);
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("exp1_kan_calibration.json")).unwrap())
            .unwrap();
    assert!(record["q_hat"].as_f64().is_some());
    assert_eq!(record["n_cal"].as_u64(), Some(60));

    let output = run(&[
        "evaluate",
        "--manifest",
        manifest.to_str().unwrap(),
        "--calibration",
        out.join("exp1_kan_calibration.json").to_str().unwrap(),
        "--config",
        &config,
        "--out",
        &out_s,
    ]);
    assert_code(&output, 0);
    let results = fs::read_to_string(out.join("exp1_kan_results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3);
    let per_point = fs::read_to_string(out.join("exp1_kan_per_point.csv")).unwrap();
    assert_eq!(per_point.lines().count(), 81);
}

#[test]
fn unknown_experiment_id_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&[
        "experiment",
        "exp9",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_code(&output, 2);
    assert!(String::from_utf8_lossy(&output.stderr).contains("exp9"));
}

#[test]
fn unwritable_output_directory_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "a plain file").unwrap();
    let output = run(&[
        "experiment",
        "exp1",
        "--config",
        &config,
        "--out",
        blocker.join("nested").to_str().unwrap(),
    ]);
    assert_code(&output, 2);
}

#[test]
fn divergent_training_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let output = run(&[
        "train",
        "--experiment",
        "exp1",
        "--model",
        "kan",
        "--config",
        &config,
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--lr",
        "1e200",
    ]);
    assert_code(&output, 1);
    assert!(String::from_utf8_lossy(&output.stderr).contains("diverged"));
}

#[test]
fn starved_calibration_warns_but_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap().to_string();

    let output = run(&[
        "train",
        "--experiment",
        "exp1",
        "--model",
        "kan",
        "--config",
        &config,
        "--out",
        &out_s,
    ]);
    assert_code(&output, 0);

    // 9 calibration points cannot support alpha = 0.05
    let starved = dir.path().join("starved.toml");
    fs::write(&starved, "cal_size = 9\n").unwrap();
    let output = run(&[
        "calibrate",
        "--manifest",
        out.join("exp1_kan_manifest.json").to_str().unwrap(),
        "--config",
        starved.to_str().unwrap(),
        "--out",
        &out_s,
    ]);
    assert_code(&output, 0);
    assert!(String::from_utf8_lossy(&output.stderr).contains("warning"));
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("exp1_kan_calibration.json")).unwrap())
            .unwrap();
    assert!(record["q_hat"].is_null());
    assert!(!record["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn alpha_mismatch_between_calibration_and_evaluation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap().to_string();

    for args in [
        vec!["train", "--experiment", "exp1", "--model", "kan"],
        vec![
            "calibrate",
            "--manifest",
            Box::leak(
                out.join("exp1_kan_manifest.json")
                    .to_str()
                    .unwrap()
                    .to_string()
                    .into_boxed_str(),
            ),
        ],
    ] {
        let mut full = args.clone();
        full.extend(["--config", &config, "--out", &out_s]);
        assert_code(&run(&full), 0);
    }

    let output = run(&[
        "evaluate",
        "--manifest",
        out.join("exp1_kan_manifest.json").to_str().unwrap(),
        "--calibration",
        out.join("exp1_kan_calibration.json").to_str().unwrap(),
        "--config",
        &config,
        "--out",
        &out_s,
        "--alpha",
        "0.1",
    ]);
    assert_code(&output, 2);
    assert!(String::from_utf8_lossy(&output.stderr).contains("alpha"));
}

#[test]
fn sweep_emits_rows_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out = dir.path().join("run");
    let output = run(&[
        "sweep",
        "subdomains",
        "2,3",
        "--experiment",
        "exp1",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&output, 0);
    let csv = fs::read_to_string(out.join("sweep_subdomains.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5); // header + 2 rows per grid point
    assert_eq!(csv.matches("\nfbkan,").count(), 4);

    let output = run(&[
        "sweep",
        "sideways",
        "2,3",
        "--experiment",
        "exp1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&output, 2);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out = dir.path().join("run");
    let output = run(&[
        "train",
        "--experiment",
        "exp1",
        "--model",
        "kan",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "13",
        "--ensemble-size",
        "3",
    ]);
    assert_code(&output, 0);
    let echo = fs::read_to_string(out.join("exp1_kan_config.toml")).unwrap();
    assert!(echo.contains("epochs = 13"), "echo:\n{echo}");
    assert!(echo.contains("ensemble_size = 3"), "echo:\n{echo}");
    assert!(out.join("exp1_kan_member_2.json").exists());
    let history = fs::read_to_string(out.join("exp1_kan_history_0.csv")).unwrap();
    assert_eq!(history.lines().count(), 15); // header + initial loss + 13 epochs
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out_serial = dir.path().join("serial");
    let out_parallel = dir.path().join("parallel");

    for (out, threads) in [(&out_serial, "1"), (&out_parallel, "2")] {
        let output = run(&[
            "experiment",
            "exp1",
            "--model",
            "kan",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert_code(&output, 0);
    }
    assert_eq!(
        fs::read(out_serial.join("results.csv")).unwrap(),
        fs::read(out_parallel.join("results.csv")).unwrap()
    );
    assert_eq!(
        fs::read(out_serial.join("exp1_kan_member_1.json")).unwrap(),
        fs::read(out_parallel.join("exp1_kan_member_1.json")).unwrap()
    );
}
