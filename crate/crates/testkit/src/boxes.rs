//! Box-loss values computed from center/size form, plus central differences.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Iou,
    Ciou,
    Eiou,
    Aiou,
}

struct Cs {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

fn center_size(b: [f64; 4]) -> Cs {
    Cs {
        cx: 0.5 * (b[0] + b[2]),
        cy: 0.5 * (b[1] + b[3]),
        w: b[2] - b[0],
        h: b[3] - b[1],
    }
}

fn overlap_1d(c1: f64, s1: f64, c2: f64, s2: f64) -> f64 {
    let lo = (c1 - s1 / 2.0).max(c2 - s2 / 2.0);
    let hi = (c1 + s1 / 2.0).min(c2 + s2 / 2.0);
    (hi - lo).max(0.0)
}

fn span_1d(c1: f64, s1: f64, c2: f64, s2: f64) -> f64 {
    (c1 + s1 / 2.0).max(c2 + s2 / 2.0) - (c1 - s1 / 2.0).min(c2 - s2 / 2.0)
}

pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let (p, g) = (center_size(a), center_size(b));
    let inter = overlap_1d(p.cx, p.w, g.cx, g.w) * overlap_1d(p.cy, p.h, g.cy, g.h);
    inter / (p.w * p.h + g.w * g.h - inter)
}

/// Aspect-consistency term `v`.
pub fn aspect_v(pred: [f64; 4], gt: [f64; 4]) -> f64 {
    let (p, g) = (center_size(pred), center_size(gt));
    let d = (g.w / g.h).atan() - (p.w / p.h).atan();
    4.0 / (PI * PI) * d * d
}

/// CIoU trade-off weight, 0 when `v` is 0.
pub fn trade_off(pred: [f64; 4], gt: [f64; 4]) -> f64 {
    let v = aspect_v(pred, gt);
    if v == 0.0 {
        0.0
    } else {
        v / ((1.0 - iou(pred, gt)) + v)
    }
}

/// Loss value. When `alpha` is given, the trade-off weight is held at that value.
pub fn loss(kind: Kind, pred: [f64; 4], gt: [f64; 4], alpha: Option<f64>) -> f64 {
    let (p, g) = (center_size(pred), center_size(gt));
    let i = iou(pred, gt);
    let cw = span_1d(p.cx, p.w, g.cx, g.w);
    let ch = span_1d(p.cy, p.h, g.cy, g.h);
    let rho2 = (p.cx - g.cx).powi(2) + (p.cy - g.cy).powi(2);
    let center = rho2 / (cw * cw + ch * ch);
    let wh = (p.w - g.w).powi(2) / (cw * cw) + (p.h - g.h).powi(2) / (ch * ch);
    let av = alpha.unwrap_or_else(|| trade_off(pred, gt)) * aspect_v(pred, gt);
    match kind {
        Kind::Iou => 1.0 - i,
        Kind::Ciou => 1.0 - i + center + av,
        Kind::Eiou => 1.0 - i + center + wh,
        Kind::Aiou => 1.0 - i + center + wh + av,
    }
}

/// Central-difference gradient with respect to the predicted corners, holding
/// the trade-off weight at its value for the unperturbed pair.
pub fn numeric_grad(kind: Kind, pred: [f64; 4], gt: [f64; 4], step: f64) -> [f64; 4] {
    let alpha = Some(trade_off(pred, gt));
    let mut g = [0.0; 4];
    for k in 0..4 {
        let mut hi = pred;
        let mut lo = pred;
        hi[k] += step;
        lo[k] -= step;
        g[k] = (loss(kind, hi, gt, alpha) - loss(kind, lo, gt, alpha)) / (2.0 * step);
    }
    g
}

/// Distance from the nearest configuration where two corresponding edges
/// coincide or the overlap collapses; finite differences straddling such a
/// point are meaningless.
pub fn kink_distance(pred: [f64; 4], gt: [f64; 4]) -> f64 {
    let mut d = f64::INFINITY;
    for k in 0..4 {
        d = d.min((pred[k] - gt[k]).abs());
    }
    // overlap edges: pred right vs gt left and vice versa
    d = d.min((pred[2] - gt[0]).abs()).min((gt[2] - pred[0]).abs());
    d = d.min((pred[3] - gt[1]).abs()).min((gt[3] - pred[1]).abs());
    d
}

pub fn max_relative_error(analytic: [f64; 4], numeric: [f64; 4]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}
