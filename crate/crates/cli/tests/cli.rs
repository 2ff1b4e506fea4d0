mod common;

use std::fs;

use common::{detkit, eval_fixture, oracle_golden_csv, report_distance, stderr, stdout};
use serde_json::Value;

#[test]
#[ignore = "rewrites testdata/eval/golden.csv from the oracle"]
fn regenerate_eval_golden() {
    let dir = eval_fixture();
    fs::write(dir.join("golden.csv"), oracle_golden_csv(&dir)).unwrap();
}

#[test]
fn committed_golden_is_current() {
    let dir = eval_fixture();
    let committed = fs::read_to_string(dir.join("golden.csv")).unwrap();
    assert_eq!(committed, oracle_golden_csv(&dir));
}

#[test]
fn loss_reports_hand_value() {
    let o = detkit(&[
        "loss",
        "--variant",
        "ciou",
        "--pred",
        "0,0,2,2",
        "--gt",
        "1,1,3,3",
        "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.968254).abs() < 1e-6);
}

#[test]
fn loss_is_zero_at_target() {
    let o = detkit(&[
        "loss",
        "--variant",
        "aiou",
        "--pred",
        "0,0,2,2",
        "--gt",
        "0,0,2,2",
        "--json",
    ]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["value"].as_f64().unwrap(), 0.0);
}

#[test]
fn degenerate_box_exits_2_and_names_it() {
    let o = detkit(&["loss", "--variant", "iou", "--pred", "0,0,0,2", "--gt", "0,0,2,2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[0, 0, 0, 2]"), "{}", stderr(&o));
}

#[test]
fn malformed_flag_exits_2() {
    let o = detkit(&["loss", "--variant", "giou", "--pred", "0,0,1,1", "--gt", "0,0,1,1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = detkit(&["loss", "--variant", "iou", "--pred", "0,0,1", "--gt", "0,0,1,1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let ok = detkit(&["gradcheck", "--samples", "200", "--seed", "3", "--variant", "ciou"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let forced = detkit(&["gradcheck", "--samples", "50", "--seed", "3", "--tol", "0"]);
    assert_eq!(forced.status.code(), Some(1));
}

#[test]
fn eval_matches_golden() {
    let dir = eval_fixture();
    let gt = dir.join("gt.jsonl");
    let pred = dir.join("pred.jsonl");
    let o = detkit(&["eval", "--gt", gt.to_str().unwrap(), "--pred", pred.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let golden = fs::read_to_string(dir.join("golden.csv")).unwrap();
    let d = report_distance(&stdout(&o), &golden).expect("same rows and metrics");
    assert!(d < 1e-9, "distance {d}");
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = eval_fixture().join("gt.jsonl");
    let pred = tmp.path().join("pred.jsonl");
    let lines: Vec<String> = fs::read_to_string(&gt)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v["score"] = Value::from(1.0);
            v.to_string()
        })
        .collect();
    fs::write(&pred, lines.join("\n")).unwrap();
    let out = tmp.path().join("report.csv");
    let o = detkit(&[
        "eval",
        "--gt",
        gt.to_str().unwrap(),
        "--pred",
        pred.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = detkit_core::eval::parse_report_csv(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report.metrics["map50"], 1.0);
    assert_eq!(report.metrics["map50_95"], 1.0);
}

#[test]
fn eval_input_errors_exit_2() {
    let dir = eval_fixture();
    let gt = dir.join("gt.jsonl");
    let o = detkit(&[
        "eval",
        "--gt",
        gt.to_str().unwrap(),
        "--pred",
        "/nonexistent/pred.jsonl",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(
        &bad,
        "{\"image_id\":\"a\",\"class_id\":0,\"bbox\":[0,0,1,1],\"score\":0.5}\n{not json}\n",
    )
    .unwrap();
    let o = detkit(&["eval", "--gt", gt.to_str().unwrap(), "--pred", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));
}

fn stream_line(frame: u64, b: [f64; 4], score: f64) -> String {
    format!(
        "{{\"image_id\":\"seq\",\"frame_id\":{frame},\"class_id\":0,\"bbox\":[{},{},{},{}],\"score\":{score}}}",
        b[0], b[1], b[2], b[3]
    )
}

fn run_smooth(input: &str, decay: &str) -> (std::process::Output, Vec<Value>) {
    let tmp = tempfile::tempdir().unwrap();
    let inp = tmp.path().join("in.jsonl");
    let out = tmp.path().join("out.jsonl");
    fs::write(&inp, input).unwrap();
    let o = detkit(&[
        "smooth",
        "--input",
        inp.to_str().unwrap(),
        "--decay",
        decay,
        "--out",
        out.to_str().unwrap(),
    ]);
    let recs = fs::read_to_string(&out)
        .map(|t| t.lines().map(|l| serde_json::from_str(l).unwrap()).collect())
        .unwrap_or_default();
    (o, recs)
}

#[test]
fn smooth_with_full_decay_passes_boxes_through() {
    let input: Vec<String> = (0..6)
        .map(|f| stream_line(f, [10.0 + f as f64, 10.0, 50.0 + f as f64, 50.0], 0.9))
        .collect();
    let (o, recs) = run_smooth(&input.join("\n"), "1.0");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(recs.len(), 6);
    for (f, r) in recs.iter().enumerate() {
        let expected = [10.0 + f as f64, 10.0, 50.0 + f as f64, 50.0];
        let got: Vec<f64> = r["bbox"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        assert_eq!(got, expected);
        assert_eq!(r["track_id"], Value::from(0));
        assert_eq!(r["image_id"], "seq");
        assert_eq!(r["frame_id"], Value::from(f as u64));
    }
}

#[test]
fn smooth_reduces_jitter() {
    let mut state = 7u64;
    let mut noise = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
    };
    let truth = [10.0, 10.0, 50.0, 50.0];
    let input: Vec<String> = (0..200)
        .map(|f| stream_line(f, truth.map(|c| c + noise()), 0.8))
        .collect();
    let raw_var = variance_x1(
        &input
            .iter()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect::<Vec<_>>(),
    );
    let (o, recs) = run_smooth(&input.join("\n"), "0.3");
    assert!(o.status.success(), "{}", stderr(&o));
    let smooth_var = variance_x1(&recs[20..]);
    let ratio = smooth_var / raw_var;
    let expected = 0.3 / (2.0 - 0.3);
    assert!((ratio / expected - 1.0).abs() < 0.35, "ratio {ratio} vs {expected}");
}

fn variance_x1(recs: &[Value]) -> f64 {
    let xs: Vec<f64> = recs.iter().map(|r| r["bbox"][0].as_f64().unwrap()).collect();
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

#[test]
fn smooth_rejects_out_of_order_frames() {
    let input = [
        stream_line(2, [0.0, 0.0, 10.0, 10.0], 0.9),
        stream_line(1, [0.0, 0.0, 10.0, 10.0], 0.9),
    ];
    let (o, _) = run_smooth(&input.join("\n"), "0.5");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn smooth_requires_frame_and_score() {
    let (o, _) = run_smooth(
        "{\"image_id\":\"a\",\"class_id\":0,\"bbox\":[0,0,1,1],\"score\":0.5}\n",
        "0.5",
    );
    assert_eq!(o.status.code(), Some(2));
    let (o, _) = run_smooth(
        "{\"image_id\":\"a\",\"frame_id\":0,\"class_id\":0,\"bbox\":[0,0,1,1]}\n",
        "0.5",
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_at_target_succeeds_immediately() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = detkit(&[
        "train", "--loss", "ciou", "--init", "1,1,3,4", "--gt", "1,1,3,4", "--out", out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    let tables = detkit_core::formats::read_csv_tables(&summary).unwrap();
    assert_eq!(tables[0].numeric_column("median_steps").unwrap(), vec![0.0]);
    assert!(tmp.path().join("curves.csv").exists());
}

#[test]
fn iou_never_succeeds_on_disjoint_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = detkit(&[
        "compare", "--losses", "iou", "--regime", "disjoint", "--tasks", "10", "--steps", "50", "--out", out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    let tables = detkit_core::formats::read_csv_tables(&summary).unwrap();
    assert_eq!(tables[0].numeric_column("success_rate").unwrap(), vec![0.0]);
}

#[test]
fn attn_reports_shape_and_checks() {
    let o = detkit(&["attn", "--shape", "4,8,8", "--seed", "5", "--stats"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("output_shape 4,8,8"));
    let field = |name: &str| -> f64 {
        s.lines()
            .find_map(|l| l.strip_prefix(name))
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    assert!(field("max_abs_out") <= field("max_abs_in"));

    let o = detkit(&["attn", "--shape", "3,8,8"]);
    assert_eq!(o.status.code(), Some(2));
    let o = detkit(&["attn", "--shape", "4,8"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn smooth_fixture_keeps_track_through_dropout() {
    let input = common::workspace_root().join("testdata/smooth/stream.jsonl");
    let o = detkit(&["smooth", "--input", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let raw_lines = fs::read_to_string(&input).unwrap().lines().count();
    assert_eq!(recs.len(), raw_lines);
    for r in &recs {
        assert_eq!(r["track_id"], r["class_id"], "{r}");
    }
}
