//! End-to-end pipeline runs of the `birm` binary.

use std::path::Path;
use std::process::{Command, Output};

fn birm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_birm"))
        .args(args)
        .output()
        .expect("spawn birm")
}

fn ok(args: &[&str]) -> Output {
    let out = birm(args);
    assert!(
        out.status.success(),
        "birm {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();

    // gen-tasks (small desk config)
    let tasks_dir = root.join("tasks");
    ok(&[
        "gen-tasks",
        "--out-dir", &s(&tasks_dir),
        "--count", "12",
        "--modulus", "11",
        "--min-steps", "2",
        "--max-steps", "4",
        "--min-eps", "0.1",
        "--max-eps", "0.3",
        "--seed", "3",
    ]);
    let tasks_path = tasks_dir.join("tasks.jsonl");
    assert_eq!(read(&tasks_path).lines().count(), 12);
    assert!(tasks_dir.join("config.toml").exists());

    // sample twice with the same seed: byte-identical corpus
    let sample_dir = root.join("sample");
    ok(&[
        "sample",
        "--out-dir", &s(&sample_dir),
        "--tasks", &s(&tasks_path),
        "--per-task", "3",
        "--seed", "5",
    ]);
    let records_path = sample_dir.join("records.jsonl");
    let first = read(&records_path);
    assert_eq!(first.lines().count(), 36);
    assert!(sample_dir.join("manifest.json").exists());
    let sample_dir2 = root.join("sample2");
    ok(&[
        "sample",
        "--out-dir", &s(&sample_dir2),
        "--tasks", &s(&tasks_path),
        "--per-task", "3",
        "--seed", "5",
    ]);
    assert_eq!(first, read(&sample_dir2.join("records.jsonl")));

    // annotate
    let ann_dir = root.join("ann");
    ok(&[
        "annotate",
        "--out-dir", &s(&ann_dir),
        "--records", &s(&records_path),
        "--tasks", &s(&tasks_path),
        "--mode", "mc_soft",
        "--rollouts", "4",
        "--seed", "7",
    ]);
    let labeled_path = ann_dir.join("labeled.jsonl");
    assert_eq!(read(&labeled_path).lines().count(), 36);

    // train (tiny config)
    let train_dir = root.join("train");
    ok(&[
        "train",
        "--out-dir", &s(&train_dir),
        "--corpus", &s(&labeled_path),
        "--kind", "birm",
        "--epochs", "3",
        "--batch-size", "32",
        "--hidden", "8",
        "--m-max", "4",
        "--seed", "1",
    ]);
    let model_path = train_dir.join("model.json");
    assert!(model_path.exists());
    let history = read(&train_dir.join("history.csv"));
    assert!(history.starts_with("epoch,prm,vm,birm"));
    assert_eq!(history.lines().count(), 4);

    // eval-bon with the trained model
    let bon_dir = root.join("bon");
    ok(&[
        "eval-bon",
        "--out-dir", &s(&bon_dir),
        "--tasks", &s(&tasks_path),
        "--model", &s(&model_path),
        "--mode", "birm",
        "--beta", "1.0",
        "--n-max", "6",
        "--seeds", "2",
        "--seed", "9",
        "--name", "birm",
    ]);
    let bon_csv = read(&bon_dir.join("bon.csv"));
    assert!(bon_csv.starts_with("method,kind,n,b,seed,accuracy,stderr,smoothed"));
    // 2 seeds x 6 N rows + 6 aggregate rows (+ header)
    assert_eq!(bon_csv.lines().count(), 1 + 12 + 6);

    // eval-bon with the oracle scorer on the same pools
    let oracle_dir = root.join("bon-oracle");
    ok(&[
        "eval-bon",
        "--out-dir", &s(&oracle_dir),
        "--tasks", &s(&tasks_path),
        "--scorer", "oracle",
        "--n-max", "6",
        "--seeds", "2",
        "--seed", "9",
        "--name", "oracle",
    ]);

    // eval-beam with the oracle scorer
    let beam_dir = root.join("beam");
    ok(&[
        "eval-beam",
        "--out-dir", &s(&beam_dir),
        "--tasks", &s(&tasks_path),
        "--scorer", "oracle",
        "--k-grid", "4",
        "--seeds", "1",
        "--seed", "2",
        "--name", "oracle",
    ]);
    let beam_csv = read(&beam_dir.join("beam.csv"));
    // K=4 has divisors 4,2,1: 3 per-seed rows + 3 aggregate + 1 best (+ header)
    assert_eq!(beam_csv.lines().count(), 8);
    assert!(beam_csv.lines().any(|l| l.starts_with("oracle,beam,4,best,")));

    // report over the bon curve
    let report_dir = root.join("report");
    ok(&[
        "report",
        "--out-dir", &s(&report_dir),
        "--curve", &s(&bon_dir.join("bon.csv")),
        "--window", "3",
    ]);
    let report_csv = read(&report_dir.join("report.csv"));
    assert!(report_csv.starts_with("method,n_max,acc_at_quarter,acc_at_half,acc_at_max,decline"));
    assert_eq!(report_csv.lines().count(), 2);
}

#[test]
fn rerank_offline_selects_by_mode() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    // Two candidates: high-reward/low-value vs lower-reward/high-value.
    let scored = root.join("scored.jsonl");
    let lines = [
        r#"{"task_id":"q1","question":null,"steps":[{"index":1,"asserted_value":1},{"index":2,"asserted_value":2}],"final_answer":2,"answer_correct":false,"provenance":"ext","reward_scores":[0.9,0.9],"value_scores":[0.2,0.1]}"#,
        r#"{"task_id":"q1","question":null,"steps":[{"index":1,"asserted_value":3},{"index":2,"asserted_value":4}],"final_answer":4,"answer_correct":true,"provenance":"ext","reward_scores":[0.7,0.7],"value_scores":[0.6,0.7]}"#,
    ];
    std::fs::write(&scored, lines.join("\n")).unwrap();

    let prm_dir = root.join("prm");
    ok(&[
        "rerank-offline",
        "--out-dir", prm_dir.to_str().unwrap(),
        "--scored", scored.to_str().unwrap(),
        "--mode", "prm",
        "--beta", "0.0",
    ]);
    let prm_csv = read(&prm_dir.join("rerank.csv"));
    assert!(prm_csv.lines().nth(1).unwrap().starts_with("q1,0,0,"));

    let birm_dir = root.join("birm");
    ok(&[
        "rerank-offline",
        "--out-dir", birm_dir.to_str().unwrap(),
        "--scored", scored.to_str().unwrap(),
        "--mode", "birm",
        "--beta", "3.0",
    ]);
    let birm_csv = read(&birm_dir.join("rerank.csv"));
    assert!(birm_csv.lines().nth(1).unwrap().starts_with("q1,3,1,"));
}

#[test]
fn config_file_supplies_defaults_and_echo_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("run.toml");
    std::fs::write(
        &config,
        "[gen-tasks]\ncount = 5\nmodulus = 11\nmin_steps = 2\nmax_steps = 3\nseed = 4\n",
    )
    .unwrap();

    let a_dir = root.join("a");
    ok(&[
        "gen-tasks",
        "--out-dir", a_dir.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
    ]);
    let a = read(&a_dir.join("tasks.jsonl"));
    assert_eq!(a.lines().count(), 5);

    // Flags override the file.
    let b_dir = root.join("b");
    ok(&[
        "gen-tasks",
        "--out-dir", b_dir.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
        "--count", "2",
    ]);
    assert_eq!(read(&b_dir.join("tasks.jsonl")).lines().count(), 2);

    // Rerunning from the echoed config reproduces the artifacts.
    let c_dir = root.join("c");
    ok(&[
        "gen-tasks",
        "--out-dir", c_dir.to_str().unwrap(),
        "--config", a_dir.join("config.toml").to_str().unwrap(),
    ]);
    assert_eq!(a, read(&c_dir.join("tasks.jsonl")));
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // Unknown flag: clap usage error, exit 2.
    let out = birm(&["gen-tasks", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    // Missing input file: exit 3 with a single-line machine-parsable error.
    let out = birm(&[
        "sample",
        "--out-dir", root.join("x").to_str().unwrap(),
        "--tasks", root.join("nope.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let error_lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(error_lines.len(), 1);
    assert!(error_lines[0].contains("kind=missing-input"));

    // Schema violation: exit 4.
    let bad = root.join("bad.jsonl");
    std::fs::write(&bad, "{\"task_id\": \"t\"}\n").unwrap();
    let out = birm(&[
        "sample",
        "--out-dir", root.join("y").to_str().unwrap(),
        "--tasks", bad.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=schema"));

    // Validation failure (non-prime modulus): exit 4.
    let out = birm(&[
        "gen-tasks",
        "--out-dir", root.join("z").to_str().unwrap(),
        "--modulus", "12",
    ]);
    assert_eq!(out.status.code(), Some(4));
}
