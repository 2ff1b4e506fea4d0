//! Exhaustive average-precision oracle.
//!
//! For every score cutoff `k` the greedy matching is re-run from scratch on the
//! top-`k` detections, giving exact (precision, recall) pairs without any
//! cumulative bookkeeping. The 101-point interpolated AP is then read off
//! those pairs directly.

use std::collections::BTreeSet;

use crate::boxes::iou;

#[derive(Debug, Clone)]
pub struct Gt {
    pub image: String,
    pub class: u32,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct Pred {
    pub image: String,
    pub class: u32,
    pub bbox: [f64; 4],
    pub score: f64,
}

fn true_positives(ranked: &[&Pred], gts: &[&Gt], thr: f64) -> usize {
    let mut used = vec![false; gts.len()];
    let mut tp = 0;
    for d in ranked {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if used[j] || g.image != d.image {
                continue;
            }
            let o = iou(d.bbox, g.bbox);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, o)) = best {
            if o >= thr {
                used[j] = true;
                tp += 1;
            }
        }
    }
    tp
}

pub fn class_ap(gts: &[Gt], preds: &[Pred], class: u32, thr: f64) -> f64 {
    let g: Vec<&Gt> = gts.iter().filter(|g| g.class == class).collect();
    if g.is_empty() {
        return 0.0;
    }
    let mut p: Vec<&Pred> = preds.iter().filter(|p| p.class == class).collect();
    // stable: equal scores keep input order
    p.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());

    let mut points = Vec::new();
    for k in 1..=p.len() {
        let tp = true_positives(&p[..k], &g, thr);
        points.push((tp as f64 / k as f64, tp as f64 / g.len() as f64));
    }
    let mut sum = 0.0;
    for j in 0..=100 {
        let r = j as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(_, rec)| *rec >= r)
            .map(|(prec, _)| *prec)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

/// Mean AP over the classes present in `gts`, one value per threshold.
pub fn mean_ap(gts: &[Gt], preds: &[Pred], thresholds: &[f64]) -> Vec<f64> {
    let classes: BTreeSet<u32> = gts.iter().map(|g| g.class).collect();
    thresholds
        .iter()
        .map(|&t| {
            if classes.is_empty() {
                return 0.0;
            }
            classes.iter().map(|&c| class_ap(gts, preds, c, t)).sum::<f64>() / classes.len() as f64
        })
        .collect()
}

pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}
