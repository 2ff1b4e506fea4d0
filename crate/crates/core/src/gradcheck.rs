//! Central finite-difference verification of the analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::geometry::{iou, loss_with_alpha, BBox, LossVariant};

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Pairs closer than this to an edge coincidence are skipped.
pub const KINK_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GradcheckSummary {
    pub variant: LossVariant,
    pub samples: usize,
    pub checked: usize,
    pub skipped_kink: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

/// Draws a random overlapping (IoU > 0) prediction/target pair.
pub fn random_overlapping_pair(rng: &mut impl Rng) -> (BBox, BBox) {
    loop {
        let (gw, gh) = (rng.gen_range(0.5..5.0), rng.gen_range(0.5..5.0));
        let (gx, gy) = (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
        let pw = gw * rng.gen_range(-1.0f64..1.0).exp();
        let ph = gh * rng.gen_range(-1.0f64..1.0).exp();
        let px = gx + rng.gen_range(-1.0..1.0) * gw;
        let py = gy + rng.gen_range(-1.0..1.0) * gh;
        let (Ok(gt), Ok(pred)) = (BBox::from_center(gx, gy, gw, gh), BBox::from_center(px, py, pw, ph)) else {
            continue;
        };
        if iou(&pred, &gt).unwrap_or(0.0) > 0.0 {
            return (pred, gt);
        }
    }
}

/// Smallest distance from the pair to a configuration where the overlap or
/// enclosure switches which box determines an edge.
pub fn kink_distance(pred: &BBox, gt: &BBox) -> f64 {
    let p = pred.to_array();
    let g = gt.to_array();
    let same_edges = (0..4).map(|k| (p[k] - g[k]).abs());
    let crossing = [
        (p[2] - g[0]).abs(),
        (g[2] - p[0]).abs(),
        (p[3] - g[1]).abs(),
        (g[3] - p[1]).abs(),
    ];
    same_edges.chain(crossing).fold(f64::INFINITY, f64::min)
}

/// Central differences of the loss value, with the trade-off weight frozen at
/// its unperturbed value.
pub fn numeric_gradient(variant: LossVariant, pred: &BBox, gt: &BBox, step: f64) -> Result<[f64; 4]> {
    let alpha = loss_with_alpha(variant, pred, gt, None)?.alpha;
    let base = pred.to_array();
    let mut grad = [0.0; 4];
    for (k, g) in grad.iter_mut().enumerate() {
        let mut hi = base;
        let mut lo = base;
        hi[k] += step;
        lo[k] -= step;
        let f_hi = loss_with_alpha(variant, &BBox::from_array(hi)?, gt, Some(alpha))?.value;
        let f_lo = loss_with_alpha(variant, &BBox::from_array(lo)?, gt, Some(alpha))?.value;
        *g = (f_hi - f_lo) / (2.0 * step);
    }
    Ok(grad)
}

/// `max_k |a_k - n_k| / max(|a|_inf, |n|_inf)`.
pub fn relative_error(analytic: &[f64; 4], numeric: &[f64; 4]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / scale
}

pub fn run(variant: LossVariant, samples: usize, seed: u64, tolerance: f64) -> Result<GradcheckSummary> {
    if samples == 0 {
        return Err(invalid("gradcheck needs at least one sample"));
    }
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(invalid(format!("tolerance must be >= 0, got {tolerance}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = GradcheckSummary {
        variant,
        samples,
        checked: 0,
        skipped_kink: 0,
        failures: 0,
        max_rel_err: 0.0,
        tolerance,
    };
    for _ in 0..samples {
        let (pred, gt) = random_overlapping_pair(&mut rng);
        if kink_distance(&pred, &gt) <= KINK_MARGIN {
            summary.skipped_kink += 1;
            continue;
        }
        let analytic = loss_with_alpha(variant, &pred, &gt, None)?.grad;
        let numeric = numeric_gradient(variant, &pred, &gt, DEFAULT_STEP)?;
        let err = relative_error(&analytic, &numeric);
        summary.checked += 1;
        summary.max_rel_err = summary.max_rel_err.max(err);
        if err.is_nan() || err >= tolerance {
            summary.failures += 1;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_variants_pass_default_tolerance() {
        for v in LossVariant::ALL {
            let s = run(v, 300, 7, DEFAULT_TOLERANCE).unwrap();
            assert!(s.passed(), "{s:?}");
            assert_eq!(s.checked + s.skipped_kink, 300);
        }
    }

    #[test]
    fn zero_tolerance_always_fails() {
        let s = run(LossVariant::Aiou, 20, 1, 0.0).unwrap();
        assert!(!s.passed());
    }

    #[test]
    fn deterministic_for_seed() {
        let a = run(LossVariant::Ciou, 50, 99, 1e-4).unwrap();
        let b = run(LossVariant::Ciou, 50, 99, 1e-4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_pairs_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (p, g) = random_overlapping_pair(&mut rng);
            assert!(iou(&p, &g).unwrap() > 0.0);
        }
    }
}
