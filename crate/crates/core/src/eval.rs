//! Mean average precision with 101-point interpolation.
//!
//! Predictions are ranked per class by descending score, ties kept in input
//! order. Each prediction takes the highest-IoU still-unmatched ground truth
//! of its class in its image and counts as a true positive iff that IoU
//! reaches the threshold. mAP is the unweighted mean over classes that have
//! at least one ground-truth box.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::formats::{fmt_sig, read_csv_tables, read_numbered};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub class_id: u32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub class_id: u32,
    pub bbox: BBox,
    pub score: f64,
}

/// 0.50, 0.55, ..., 0.95
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_thresholds(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| invalid(format!("bad threshold {s:?}")))
    };
    let values = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, stop, step] = parts.as_slice() else {
            return Err(invalid(format!("expected start:stop:step, got {text:?}")));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if step.is_nan() || step <= 0.0 || stop < start {
            return Err(invalid(format!("empty threshold range {text:?}")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // snap to 1e-9 so 0.5 + 2 * 0.05 is exactly 0.6
        (0..n)
            .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
            .collect()
    } else {
        text.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    validate_thresholds(&values)?;
    Ok(values)
}

fn validate_thresholds(t: &[f64]) -> Result<()> {
    if t.is_empty() {
        return Err(invalid("at least one IoU threshold is required"));
    }
    if let Some(bad) = t.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(invalid(format!("IoU threshold {bad} outside (0, 1)")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// True-positive flag per prediction, in the order given.
    pub tp: Vec<bool>,
    pub false_negatives: usize,
}

/// Matches score-sorted predictions of one class against that class's
/// ground truth.
pub fn match_for_ap(predictions: &[&Prediction], ground_truths: &[&GroundTruth], iou_threshold: f64) -> MatchResult {
    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in ground_truths.iter().enumerate() {
        by_image.entry(g.image_id.as_str()).or_default().push(i);
    }
    let mut used = vec![false; ground_truths.len()];
    let mut tp = Vec::with_capacity(predictions.len());
    let mut matched = 0;
    for p in predictions {
        let mut best: Option<(usize, f64)> = None;
        for &gi in by_image.get(p.image_id.as_str()).into_iter().flatten() {
            if used[gi] {
                continue;
            }
            // both boxes were validated on construction
            let o = iou(&p.bbox, &ground_truths[gi].bbox).unwrap_or(0.0);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((gi, o));
            }
        }
        let hit = matches!(best, Some((_, o)) if o >= iou_threshold);
        if let (true, Some((gi, _))) = (hit, best) {
            used[gi] = true;
            matched += 1;
        }
        tp.push(hit);
    }
    MatchResult {
        tp,
        false_negatives: ground_truths.len() - matched,
    }
}

/// 101-point interpolated AP from TP flags in rank order.
pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        precision.push(hits as f64 / (k + 1) as f64);
        recall.push(hits as f64 / n_gt as f64);
    }
    // envelope: best precision at this rank or any later one
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for j in 0..=100 {
        let r = j as f64 / 100.0;
        while k < recall.len() && recall[k] < r {
            k += 1;
        }
        if k == recall.len() {
            break;
        }
        sum += precision[k];
    }
    sum / 101.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// AP per threshold, for every class with ground truth.
    pub per_class_ap: BTreeMap<u32, Vec<f64>>,
    pub counts: BTreeMap<u32, Vec<Counts>>,
    pub map_per_threshold: Vec<f64>,
    /// mAP at IoU 0.5, when 0.5 is among the thresholds.
    pub map50: Option<f64>,
    /// Mean of `map_per_threshold`; the usual mAP50-95 for the default thresholds.
    pub map50_95: f64,
    /// Predictions whose class has no ground truth.
    pub ignored_predictions: usize,
}

pub fn evaluate(ground_truths: &[GroundTruth], predictions: &[Prediction], thresholds: &[f64]) -> Result<EvalReport> {
    validate_thresholds(thresholds)?;
    let classes: BTreeSet<u32> = ground_truths.iter().map(|g| g.class_id).collect();

    let mut ignored = 0;
    let mut per_class_preds: BTreeMap<u32, Vec<&Prediction>> = BTreeMap::new();
    for p in predictions {
        if classes.contains(&p.class_id) {
            per_class_preds.entry(p.class_id).or_default().push(p);
        } else {
            ignored += 1;
        }
    }
    if ignored > 0 {
        log::warn!("ignoring {ignored} prediction(s) for classes without ground truth");
    }
    for preds in per_class_preds.values_mut() {
        // stable sort keeps input order among equal scores
        preds.sort_by(|a, b| b.score.total_cmp(&a.score));
    }

    let jobs: Vec<(u32, usize)> = classes
        .iter()
        .flat_map(|&c| (0..thresholds.len()).map(move |t| (c, t)))
        .collect();
    let results: Vec<(u32, usize, f64, Counts)> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let gts: Vec<&GroundTruth> = ground_truths.iter().filter(|g| g.class_id == c).collect();
            let preds = per_class_preds.get(&c).map(Vec::as_slice).unwrap_or(&[]);
            let m = match_for_ap(preds, &gts, thresholds[t]);
            let tp = m.tp.iter().filter(|&&x| x).count();
            let counts = Counts {
                tp,
                fp: m.tp.len() - tp,
                fn_: m.false_negatives,
            };
            (c, t, average_precision(&m.tp, gts.len()), counts)
        })
        .collect();

    let mut per_class_ap: BTreeMap<u32, Vec<f64>> = classes.iter().map(|&c| (c, vec![0.0; thresholds.len()])).collect();
    let mut counts: BTreeMap<u32, Vec<Counts>> = classes
        .iter()
        .map(|&c| (c, vec![Counts::default(); thresholds.len()]))
        .collect();
    for (c, t, ap, n) in results {
        per_class_ap.get_mut(&c).expect("class present")[t] = ap;
        counts.get_mut(&c).expect("class present")[t] = n;
    }

    let map_per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|t| {
            if classes.is_empty() {
                0.0
            } else {
                per_class_ap.values().map(|v| v[t]).sum::<f64>() / classes.len() as f64
            }
        })
        .collect();
    let map50 = thresholds
        .iter()
        .position(|&t| (t - 0.5).abs() < 1e-9)
        .map(|i| map_per_threshold[i]);
    let map50_95 = map_per_threshold.iter().sum::<f64>() / map_per_threshold.len() as f64;

    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        per_class_ap,
        counts,
        map_per_threshold,
        map50,
        map50_95,
        ignored_predictions: ignored,
    })
}

/// Loads ground truth and predictions from JSONL. Every prediction line must
/// carry a score; scores on ground-truth lines are ignored.
pub fn load_inputs(gt_path: &Path, pred_path: &Path) -> Result<(Vec<GroundTruth>, Vec<Prediction>)> {
    let gts = read_numbered(gt_path)?
        .into_iter()
        .map(|(_, r)| {
            Ok(GroundTruth {
                bbox: r.bbox()?,
                image_id: r.image_id,
                class_id: r.class_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let preds = read_numbered(pred_path)?
        .into_iter()
        .map(|(line, r)| {
            let score = r.score.ok_or_else(|| Error::Parse {
                path: pred_path.to_path_buf(),
                line,
                message: "prediction has no score".into(),
            })?;
            Ok(Prediction {
                bbox: r.bbox()?,
                image_id: r.image_id,
                class_id: r.class_id,
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((gts, preds))
}

pub fn evaluate_files(gt_path: &Path, pred_path: &Path, thresholds: &[f64]) -> Result<EvalReport> {
    let (gts, preds) = load_inputs(gt_path, pred_path)?;
    evaluate(&gts, &preds, thresholds)
}

fn fmt_threshold(t: f64) -> String {
    let s = format!("{t:.4}");
    let s = s.trim_end_matches('0');
    if s.ends_with('.') {
        format!("{s}0")
    } else {
        s.to_string()
    }
}

impl EvalReport {
    /// Per-class table (`class,threshold,ap,tp,fp,fn`), a blank line, then a
    /// `metric,value` summary.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,threshold,ap,tp,fp,fn\n");
        for (c, aps) in &self.per_class_ap {
            for (t, ap) in aps.iter().enumerate() {
                let n = self.counts[c][t];
                let _ = writeln!(
                    s,
                    "{c},{},{},{},{},{}",
                    fmt_threshold(self.thresholds[t]),
                    fmt_sig(*ap),
                    n.tp,
                    n.fp,
                    n.fn_
                );
            }
        }
        s.push_str("\nmetric,value\n");
        if let Some(m) = self.map50 {
            let _ = writeln!(s, "map50,{}", fmt_sig(m));
        }
        let _ = writeln!(s, "map50_95,{}", fmt_sig(self.map50_95));
        for (t, m) in self.thresholds.iter().zip(&self.map_per_threshold) {
            let _ = writeln!(s, "map@{},{}", fmt_threshold(*t), fmt_sig(*m));
        }
        s
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Summary values read back from a report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTables {
    /// `(class, threshold, ap)`
    pub rows: Vec<(u32, f64, f64)>,
    pub metrics: BTreeMap<String, f64>,
}

pub fn parse_report_csv(text: &str) -> Result<ReportTables> {
    let tables = read_csv_tables(text)?;
    let [per_class, summary] = tables.as_slice() else {
        return Err(invalid(format!("expected 2 tables, found {}", tables.len())));
    };
    let thr = per_class.numeric_column("threshold")?;
    let ap = per_class.numeric_column("ap")?;
    let class = per_class.numeric_column("class")?;
    let rows = class
        .into_iter()
        .zip(thr)
        .zip(ap)
        .map(|((c, t), a)| (c as u32, t, a))
        .collect();
    let values = summary.numeric_column("value")?;
    let names = summary.column("metric").ok_or_else(|| invalid("no metric column"))?;
    let metrics = summary
        .rows
        .iter()
        .zip(values)
        .map(|(r, v)| (r[names].clone(), v))
        .collect();
    Ok(ReportTables { rows, metrics })
}
