//! End-to-end checks of the command-line binary: JSON/CSV contracts,
//! exit codes, and cross-thread determinism.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gege(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gege"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "expected success, stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn example_csv() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data/example.csv")
        .display()
        .to_string()
}

#[test]
fn design_reports_weights_value_and_counts() {
    let path = example_csv();
    let out = stdout_json(&gege(&["design", "--features", &path, "--round", "200"]));
    let weights: Vec<f64> = out["weights"]
        .as_array()
        .expect("weights array")
        .iter()
        .map(|w| w.as_f64().unwrap())
        .collect();
    assert_eq!(weights.len(), 8);
    let total: f64 = weights.iter().sum();
    assert!((total - 1.0).abs() < 1e-9, "weights sum to one, got {total}");
    assert_eq!(out["h_s"].as_u64(), Some(3));
    let value = out["value"].as_f64().expect("value");
    assert!((value - 3.0).abs() < 1e-2, "optimum near h_s, got {value}");
    let counts: Vec<u64> = out["counts"]
        .as_array()
        .expect("counts present when rounding")
        .iter()
        .map(|c| c.as_u64().unwrap())
        .collect();
    assert_eq!(counts.iter().sum::<u64>(), 200);
    assert!(counts.iter().all(|&c| c >= 1), "support floor of one pull");

    let bare = stdout_json(&gege(&["design", "--features", &path]));
    assert!(bare.get("counts").is_none(), "no counts without --round");
}

#[test]
fn gaps_lists_arms_one_based_with_complexities() {
    let path = example_csv();
    let out = stdout_json(&gege(&["gaps", "--instance", &path]));
    let arms = out["arms"].as_array().expect("arms array");
    assert_eq!(arms.len(), 8);
    assert_eq!(arms[0]["arm"].as_u64(), Some(1), "arm numbers are 1-based");
    assert_eq!(out["pareto"], serde_json::json!([1, 2, 3]));
    assert_eq!(out["rank"].as_u64(), Some(3));
    for key in ["h1", "h2", "h1_lin", "h2_lin"] {
        assert!(out[key].as_f64().expect(key) > 0.0);
    }
    // The linear measures count dimensions, not arms, so they cannot
    // exceed the unstructured ones here.
    assert!(out["h1_lin"].as_f64().unwrap() <= out["h1"].as_f64().unwrap());
}

#[test]
fn noiseless_runs_recover_the_front_and_mark_correctness() {
    for sub in ["run-fb", "run-fc"] {
        let mut args = vec![sub, "--synth", "4,3,12", "--seed", "5", "--sigma", "0"];
        if sub == "run-fb" {
            args.extend(["--budget", "2000"]);
        } else {
            args.extend(["--delta", "0.1"]);
        }
        let out = stdout_json(&gege(&args));
        assert_eq!(out["correct"].as_bool(), Some(true), "{sub} flags correctness");
        let rec = out["recommended"].as_array().expect("recommended");
        assert_eq!(rec.len(), 4, "{sub} finds the canonical front");
        assert!(!out["trace"].as_array().unwrap().is_empty());
        assert!(out["total_samples"].as_u64().unwrap() > 0);
    }
}

#[test]
fn bench_output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut files = Vec::new();
    for threads in ["1", "4"] {
        let path = dir.path().join(format!("rows-{threads}.csv"));
        let out = gege(&[
            "bench", "--synth", "3,2,8", "--seed", "11", "--delta", "0.1",
            "--reps", "6", "--threads", threads,
            "--out", path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(
            String::from_utf8_lossy(&out.stderr).contains("error_rate"),
            "summary goes to stderr"
        );
        files.push(std::fs::read_to_string(&path).expect("rows file"));
    }
    let strip_wall = |text: &str| -> Vec<String> {
        text.lines()
            .map(|l| l.rsplit_once(',').expect("has columns").0.to_string())
            .collect()
    };
    assert_eq!(strip_wall(&files[0]), strip_wall(&files[1]));
    assert!(files[0].starts_with(
        "stream_id,algorithm,K,h,d,param,total_samples,rounds,correct,recommended,wall_ms"
    ));
}

#[test]
fn bench_emits_json_when_asked() {
    let out = gege(&[
        "bench", "--synth", "3,2,8", "--seed", "11", "--sigma", "0",
        "--budget", "400", "--reps", "2", "--format", "json",
    ]);
    let rows: Vec<Value> = serde_json::from_slice(&out.stdout).expect("JSON rows");
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["stream_id"].as_u64(), Some(0));
    assert_eq!(rows[0]["param"].as_str(), Some("400"));
    assert_eq!(rows[0]["recommended"].as_str(), Some("1;2;3"));
}

#[test]
fn synth_round_trips_through_gaps() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("inst.csv");
    let out = gege(&["synth", "--synth", "3,2,5", "--seed", "9", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("f1,f2,f3,y1,y2"));
    let gaps = stdout_json(&gege(&["gaps", "--instance", path.to_str().unwrap()]));
    assert_eq!(gaps["pareto"], serde_json::json!([1, 2, 3]));
}

#[test]
fn exit_codes_separate_usage_data_and_algorithm_errors() {
    // Usage: no instance source at all.
    let out = gege(&["gaps"]);
    assert_eq!(out.status.code(), Some(1));

    // Usage: both stopping rules at once.
    let out = gege(&["bench", "--synth", "3,2,8", "--delta", "0.1", "--budget", "10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage error"));

    // Data: unreadable instance file.
    let out = gege(&["gaps", "--instance", "/nonexistent/inst.csv"]);
    assert_eq!(out.status.code(), Some(2));

    // Data: malformed cell, diagnostic names the line.
    let dir = tempfile::tempdir().expect("tempdir");
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "f1,y1\n1.0,2.0\n1.0,oops\n").unwrap();
    let out = gege(&["gaps", "--instance", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    // Algorithm: fixed budget below the feasible minimum.
    let out = gege(&["run-fb", "--synth", "3,2,8", "--seed", "11", "--budget", "5"]);
    assert_eq!(out.status.code(), Some(3));

    // Help and version are not errors.
    assert_eq!(gege(&["--help"]).status.code(), Some(0));
    assert_eq!(gege(&["--version"]).status.code(), Some(0));
}
