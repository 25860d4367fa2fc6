//! End-to-end runs of the `boxkit` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn boxkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boxkit"))
        .args(args)
        .env_remove("BOXKIT_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_sample_jsonl(path: &Path) {
    let lines = [
        r#"{"image_id":"img-1","class_id":0,"x1":0.0,"y1":0.0,"x2":10.0,"y2":10.0,"score":0.9}"#,
        r#"{"image_id":"img-1","class_id":0,"x1":1.0,"y1":1.0,"x2":11.0,"y2":11.0,"score":0.8}"#,
        r#"{"image_id":"img-1","class_id":0,"x1":40.0,"y1":40.0,"x2":50.0,"y2":50.0,"score":0.7}"#,
        r#"{"image_id":"img-1","class_id":1,"x1":5.0,"y1":5.0,"x2":15.0,"y2":15.0,"score":0.6}"#,
        r#"{"image_id":"img-2","class_id":0,"x1":2.0,"y1":2.0,"x2":8.0,"y2":8.0,"score":0.5}"#,
    ];
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn simulate_tiny_run_is_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let run = |dir: &Path| {
        let out = boxkit(&[
            "simulate",
            "--loss",
            "diou",
            "--points",
            "40",
            "--iters",
            "25",
            "--seed",
            "11",
            "--out-dir",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(dir_a.path());
    run(dir_b.path());

    let curve_a = fs::read_to_string(dir_a.path().join("curve.csv")).unwrap();
    let curve_b = fs::read_to_string(dir_b.path().join("curve.csv")).unwrap();
    assert_eq!(curve_a, curve_b);
    assert!(curve_a.starts_with("t,error_sum,error_sum_per_case"));
    // header plus one row per iteration
    assert_eq!(curve_a.lines().count(), 26);

    let map = fs::read_to_string(dir_a.path().join("map.csv")).unwrap();
    assert!(map.starts_with("px,py,final_error"));
    assert_eq!(map.lines().count(), 41);
}

#[test]
fn simulate_worker_count_does_not_change_output() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for (dir, workers) in [(dir_a.path(), "1"), (dir_b.path(), "4")] {
        let out = boxkit(&[
            "simulate",
            "--loss",
            "ciou",
            "--points",
            "30",
            "--iters",
            "20",
            "--seed",
            "3",
            "--workers",
            workers,
            "--out-dir",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let a = fs::read_to_string(dir_a.path().join("curve.csv")).unwrap();
    let b = fs::read_to_string(dir_b.path().join("curve.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn simulate_rejects_bad_config_values() {
    let out = boxkit(&["simulate", "--points", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nms_round_trip_jsonl_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("dets.jsonl");
    let output = dir.path().join("kept.csv");
    write_sample_jsonl(&input);

    let out = boxkit(&[
        "nms",
        "--method",
        "cluster",
        "--eps",
        "0.5",
        input.to_str().unwrap(),
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout_of(&out);
    // the two overlapping img-1/class-0 boxes collapse to one
    assert!(text.contains("image=img-1 kept=3/4"), "stdout: {text}");
    assert!(text.contains("image=img-2 kept=1/1"), "stdout: {text}");
    assert!(text.contains("channels=3 boxes=5 kept=4"), "stdout: {text}");

    let kept = fs::read_to_string(&output).unwrap();
    let mut lines = kept.lines();
    assert_eq!(
        lines.next().unwrap(),
        "image_id,class_id,x1,y1,x2,y2,score"
    );
    assert_eq!(lines.count(), 4);
    assert!(kept.contains("img-1,0,40"));
    // score of the suppressed overlapping box
    assert!(!kept.contains("0.8"));
}

#[test]
fn nms_rejects_out_of_range_eps() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("dets.jsonl");
    write_sample_jsonl(&input);
    let out = boxkit(&[
        "nms",
        "--method",
        "fast",
        "--eps",
        "1.5",
        input.to_str().unwrap(),
        dir.path().join("out.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nms_missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = boxkit(&[
        "nms",
        "--method",
        "fast",
        dir.path().join("absent.jsonl").to_str().unwrap(),
        dir.path().join("out.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn nms_malformed_record_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("dets.jsonl");
    fs::write(
        &input,
        concat!(
            r#"{"image_id":"a","class_id":0,"x1":0.0,"y1":0.0,"x2":1.0,"y2":1.0,"score":0.5}"#,
            "\n",
            r#"{"image_id":"a","class_id":0,"x1":5.0,"y1":0.0,"x2":1.0,"y2":1.0,"score":0.5}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = boxkit(&[
        "nms",
        "--method",
        "original",
        input.to_str().unwrap(),
        dir.path().join("out.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("record 2"), "stderr: {err}");
}

#[test]
fn bench_emits_parseable_csv() {
    let out = boxkit(&[
        "bench",
        "--methods",
        "fast,cluster,cluster-w",
        "--synthetic",
        "clustered",
        "--n",
        "120",
        "--channels",
        "3",
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout_of(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,channels,boxes,kept,mean_iterations,median_iterations,elapsed_ms,boxes_per_sec"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 8, "row: {row}");
        assert_eq!(fields[1], "3");
        assert_eq!(fields[2], "360");
        let kept: usize = fields[3].parse().unwrap();
        assert!(kept >= 3 && kept <= 360);
        let _: f64 = fields[4].parse().unwrap();
        let _: usize = fields[5].parse().unwrap();
        let _: f64 = fields[6].parse().unwrap();
        let _: f64 = fields[7].parse().unwrap();
    }
}

#[test]
fn verify_passes_and_inject_fault_trips_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let ok = boxkit(&[
        "verify",
        "--seed",
        "9",
        "--trials",
        "30",
        "--dump-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout_of(&ok));
    let text = stdout_of(&ok);
    assert!(text.contains("PASS"));
    assert!(!text.contains("\nFAIL"));

    let bad = boxkit(&[
        "verify",
        "--seed",
        "9",
        "--trials",
        "30",
        "--inject-fault",
        "--dump-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(3));
    let text = stdout_of(&bad);
    assert!(text.contains("FAIL"), "stdout: {text}");
    // a failing check dumps the offending channel for replay
    let dumps: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "jsonl"))
        .collect();
    assert!(!dumps.is_empty());
}

#[test]
fn seed_env_var_matches_flag() {
    let dir_flag = tempfile::tempdir().unwrap();
    let dir_env = tempfile::tempdir().unwrap();
    let out = boxkit(&[
        "simulate",
        "--points",
        "20",
        "--iters",
        "10",
        "--seed",
        "21",
        "--out-dir",
        dir_flag.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_boxkit"))
        .args([
            "simulate",
            "--points",
            "20",
            "--iters",
            "10",
            "--out-dir",
            dir_env.path().to_str().unwrap(),
        ])
        .env("BOXKIT_SEED", "21")
        .output()
        .unwrap();
    assert!(out.status.success());
    let a = fs::read_to_string(dir_flag.path().join("curve.csv")).unwrap();
    let b = fs::read_to_string(dir_env.path().join("curve.csv")).unwrap();
    assert_eq!(a, b);
}
