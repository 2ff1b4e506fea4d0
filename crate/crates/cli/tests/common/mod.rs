#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use detkit_testkit::map::{class_ap, coco_thresholds, mean_ap, Gt, Pred};
use serde_json::Value;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn eval_fixture() -> PathBuf {
    workspace_root().join("testdata/eval")
}

pub fn detkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detkit"))
        .args(args)
        .output()
        .expect("spawn detkit")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn bbox(v: &Value) -> [f64; 4] {
    let a = v["bbox"].as_array().unwrap();
    [0, 1, 2, 3].map(|i| a[i].as_f64().unwrap())
}

/// Oracle inputs read straight from the fixture JSONL, bypassing the library parser.
pub fn oracle_inputs(gt: &Path, pred: &Path) -> (Vec<Gt>, Vec<Pred>) {
    let gts = json_lines(gt)
        .iter()
        .map(|v| Gt {
            image: v["image_id"].as_str().unwrap().to_string(),
            class: v["class_id"].as_u64().unwrap() as u32,
            bbox: bbox(v),
        })
        .collect();
    let preds = json_lines(pred)
        .iter()
        .map(|v| Pred {
            image: v["image_id"].as_str().unwrap().to_string(),
            class: v["class_id"].as_u64().unwrap() as u32,
            bbox: bbox(v),
            score: v["score"].as_f64().unwrap(),
        })
        .collect();
    (gts, preds)
}

/// Golden CSV for the bundled fixture: per-class AP rows and summary metrics,
/// written at full precision.
pub fn oracle_golden_csv(dir: &Path) -> String {
    let (gts, preds) = oracle_inputs(&dir.join("gt.jsonl"), &dir.join("pred.jsonl"));
    let thresholds = coco_thresholds();
    let mut classes: Vec<u32> = gts.iter().map(|g| g.class).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut s = String::from("class,threshold,ap\n");
    for &c in &classes {
        for &t in &thresholds {
            s.push_str(&format!("{c},{t:?},{:?}\n", class_ap(&gts, &preds, c, t)));
        }
    }
    let maps = mean_ap(&gts, &preds, &thresholds);
    s.push_str("\nmetric,value\n");
    s.push_str(&format!("map50,{:?}\n", maps[0]));
    s.push_str(&format!(
        "map50_95,{:?}\n",
        maps.iter().sum::<f64>() / maps.len() as f64
    ));
    for (t, m) in thresholds.iter().zip(&maps) {
        s.push_str(&format!("map@{t:?},{m:?}\n"));
    }
    s
}

/// Largest absolute difference between two report CSVs over AP rows and
/// shared metrics; `None` if their row/metric sets differ.
pub fn report_distance(a: &str, b: &str) -> Option<f64> {
    let a = detkit_core::eval::parse_report_csv(a).ok()?;
    let b = detkit_core::eval::parse_report_csv(b).ok()?;
    if a.rows.len() != b.rows.len() || a.metrics.keys().ne(b.metrics.keys()) {
        return None;
    }
    let mut worst = 0.0f64;
    for (x, y) in a.rows.iter().zip(&b.rows) {
        if x.0 != y.0 || (x.1 - y.1).abs() > 1e-12 {
            return None;
        }
        worst = worst.max((x.2 - y.2).abs());
    }
    for (k, v) in &a.metrics {
        worst = worst.max((v - b.metrics[k]).abs());
    }
    Some(worst)
}
