//! Box-regression convergence harness.
//!
//! The predicted box's four corner coordinates are the parameters; each step
//! applies `theta <- theta - lr * grad` with the gradient from the configured
//! loss. Optional backtracking halves the step until the loss does not
//! increase. A run succeeds once IoU with the target reaches `success_iou`.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::formats::fmt_sig;
use crate::geometry::{iou, loss, BBox, LossVariant};

/// Minimum width/height enforced after each update.
pub const REPAIR_EPSILON: f64 = 1e-6;
const MAX_HALVINGS: u32 = 40;
/// Targets have centers in `[0, TASK_EXTENT)^2` and sides in `[s, 2s)`.
pub const TASK_EXTENT: f64 = 4.0;
pub const TASK_MIN_SIZE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Initial IoU in [0.1, 0.5].
    Overlap,
    /// Initial IoU exactly 0.
    Disjoint,
    /// Shared center and area, aspect ratios differing by at least 2x.
    AspectSkew,
    /// Shared center and aspect ratio, areas differing by at least 4x.
    ScaleSkew,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Self::Overlap, Self::Disjoint, Self::AspectSkew, Self::ScaleSkew];

    pub fn name(self) -> &'static str {
        match self {
            Self::Overlap => "overlap",
            Self::Disjoint => "disjoint",
            Self::AspectSkew => "aspect-skew",
            Self::ScaleSkew => "scale-skew",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| {
            invalid(format!(
                "unknown regime {s:?} (expected overlap, disjoint, aspect-skew or scale-skew)"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionTask {
    pub id: usize,
    pub gt: BBox,
    pub init: BBox,
    pub seed: u64,
}

fn random_target(rng: &mut impl Rng) -> (f64, f64, f64, f64) {
    (
        rng.gen_range(0.0..TASK_EXTENT),
        rng.gen_range(0.0..TASK_EXTENT),
        rng.gen_range(TASK_MIN_SIZE..2.0 * TASK_MIN_SIZE),
        rng.gen_range(TASK_MIN_SIZE..2.0 * TASK_MIN_SIZE),
    )
}

fn make_task(id: usize, seed: u64, regime: Regime) -> RegressionTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let (cx, cy, w, h) = random_target(&mut rng);
        let Ok(gt) = BBox::from_center(cx, cy, w, h) else {
            continue;
        };
        let init = match regime {
            Regime::Overlap => {
                let iw = w * rng.gen_range(-0.5f64..0.5).exp();
                let ih = h * rng.gen_range(-0.5f64..0.5).exp();
                let dx = rng.gen_range(-1.0..1.0) * w;
                let dy = rng.gen_range(-1.0..1.0) * h;
                BBox::from_center(cx + dx, cy + dy, iw, ih)
            }
            Regime::Disjoint => {
                let iw = w * rng.gen_range(-0.5f64..0.5).exp();
                let ih = h * rng.gen_range(-0.5f64..0.5).exp();
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let gap = rng.gen_range(0.1..0.5) * w.min(h);
                // push the centers apart along `angle` until the boxes separate by `gap`
                let (ux, uy) = (angle.cos(), angle.sin());
                let need_x = if ux.abs() > 1e-9 {
                    ((w + iw) / 2.0 + gap) / ux.abs()
                } else {
                    f64::INFINITY
                };
                let need_y = if uy.abs() > 1e-9 {
                    ((h + ih) / 2.0 + gap) / uy.abs()
                } else {
                    f64::INFINITY
                };
                let t = need_x.min(need_y);
                BBox::from_center(cx + t * ux, cy + t * uy, iw, ih)
            }
            Regime::AspectSkew => {
                let f: f64 = rng.gen_range(1.5..2.5);
                let f = if rng.gen_bool(0.5) { f } else { 1.0 / f };
                BBox::from_center(cx, cy, w * f, h / f)
            }
            Regime::ScaleSkew => {
                let s: f64 = rng.gen_range(2.0..3.0);
                let s = if rng.gen_bool(0.5) { s } else { 1.0 / s };
                BBox::from_center(cx, cy, w * s, h * s)
            }
        };
        let Ok(init) = init else { continue };
        let o = iou(&init, &gt).expect("valid boxes");
        let ok = match regime {
            Regime::Overlap => (0.1..=0.5).contains(&o),
            Regime::Disjoint => o == 0.0,
            _ => true,
        };
        if ok {
            return RegressionTask { id, gt, init, seed };
        }
    }
}

/// Deterministic task list; task `i` draws from its own seed derived from `seed`.
pub fn gen_tasks(n: usize, seed: u64, regime: Regime) -> Result<Vec<RegressionTask>> {
    if n == 0 {
        return Err(invalid("need at least one task"));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|i| make_task(i, master.gen(), regime)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: LossVariant,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub success_iou: f64,
    pub backtracking: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: LossVariant::Aiou,
            learning_rate: 0.01,
            steps: 2000,
            seed: 0,
            success_iou: 0.9,
            backtracking: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.steps == 0 {
            return Err(invalid("steps must be positive"));
        }
        if !(self.success_iou > 0.0 && self.success_iou < 1.0) {
            return Err(invalid(format!(
                "success IoU must lie in (0, 1), got {}",
                self.success_iou
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub task_id: usize,
    pub variant: LossVariant,
    pub steps: Vec<StepRecord>,
    pub steps_to_success: Option<usize>,
    pub final_box: BBox,
    /// Steps after which a collapsed width or height was clamped.
    pub repairs: Vec<usize>,
    /// Set when the run stopped on a non-finite gradient.
    pub aborted: Option<String>,
}

impl TrainRecord {
    pub fn final_iou(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.iou)
    }
}

fn repair(c: &mut [f64; 4]) -> bool {
    let mut fixed = false;
    if c[2].is_nan() || c[2] < c[0] + REPAIR_EPSILON {
        c[2] = c[0] + REPAIR_EPSILON;
        fixed = true;
    }
    if c[3].is_nan() || c[3] < c[1] + REPAIR_EPSILON {
        c[3] = c[1] + REPAIR_EPSILON;
        fixed = true;
    }
    fixed
}

/// Candidate box after a step of size `lr`, repaired if needed.
fn take_step(at: &[f64; 4], grad: &[f64; 4], lr: f64) -> ([f64; 4], bool) {
    let mut next = [0.0; 4];
    for k in 0..4 {
        next[k] = at[k] - lr * grad[k];
    }
    let fixed = repair(&mut next);
    (next, fixed)
}

pub fn train_box(task: &RegressionTask, config: &TrainConfig) -> Result<TrainRecord> {
    config.validate()?;
    let mut record = TrainRecord {
        task_id: task.id,
        variant: config.variant,
        steps: Vec::new(),
        steps_to_success: None,
        final_box: task.init,
        repairs: Vec::new(),
        aborted: None,
    };
    let mut current = task.init.to_array();
    let mut report = loss(config.variant, &task.init, &task.gt)?;

    for step in 0..config.steps {
        record.steps.push(StepRecord {
            step,
            loss: report.value,
            iou: report.iou,
        });
        if report.iou >= config.success_iou {
            record.steps_to_success = Some(step);
            break;
        }
        if report.grad.iter().any(|g| !g.is_finite()) {
            record.aborted = Some(Error::NonFiniteGradient { step }.to_string());
            break;
        }

        let mut lr = config.learning_rate;
        let (mut next, mut fixed) = take_step(&current, &report.grad, lr);
        let mut next_report = loss(config.variant, &BBox::from_array(next)?, &task.gt)?;
        if config.backtracking {
            let mut halvings = 0;
            while next_report.value > report.value && halvings < MAX_HALVINGS {
                lr /= 2.0;
                halvings += 1;
                (next, fixed) = take_step(&current, &report.grad, lr);
                next_report = loss(config.variant, &BBox::from_array(next)?, &task.gt)?;
            }
            if next_report.value > report.value {
                // no decreasing step found: stay put
                next = current;
                fixed = false;
                next_report = report;
            }
        }
        if fixed {
            record.repairs.push(step);
        }
        current = next;
        report = next_report;
    }
    record.final_box = BBox::from_array(current)?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: LossVariant,
    pub tasks: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Median steps to success over all tasks, counting failures as never
    /// succeeding; `None` when fewer than half succeed.
    pub median_steps: Option<f64>,
    pub final_iou_min: f64,
    pub final_iou_median: f64,
    pub final_iou_mean: f64,
    pub final_iou_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub summaries: Vec<VariantSummary>,
    pub records: Vec<TrainRecord>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn summarize(variant: LossVariant, records: &[&TrainRecord]) -> VariantSummary {
    let n = records.len();
    let successes = records.iter().filter(|r| r.steps_to_success.is_some()).count();
    let mut steps: Vec<f64> = records
        .iter()
        .map(|r| r.steps_to_success.map_or(f64::INFINITY, |s| s as f64))
        .collect();
    steps.sort_by(f64::total_cmp);
    let med = if n == 0 { f64::INFINITY } else { median(&steps) };
    let mut ious: Vec<f64> = records.iter().map(|r| r.final_iou()).collect();
    ious.sort_by(f64::total_cmp);
    let (min, max, mid, mean) = if n == 0 {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        (ious[0], ious[n - 1], median(&ious), ious.iter().sum::<f64>() / n as f64)
    };
    VariantSummary {
        variant,
        tasks: n,
        successes,
        success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
        median_steps: med.is_finite().then_some(med),
        final_iou_min: min,
        final_iou_median: mid,
        final_iou_mean: mean,
        final_iou_max: max,
    }
}

/// Trains every task under every variant. Runs fan out across threads;
/// output order is fixed by (variant, task).
pub fn compare_convergence(
    tasks: &[RegressionTask],
    variants: &[LossVariant],
    config: &TrainConfig,
) -> Result<ComparisonReport> {
    if tasks.is_empty() {
        return Err(invalid("need at least one task"));
    }
    if variants.is_empty() {
        return Err(invalid("need at least one loss variant"));
    }
    config.validate()?;
    let jobs: Vec<(LossVariant, &RegressionTask)> = variants
        .iter()
        .flat_map(|&v| tasks.iter().map(move |t| (v, t)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(variant, task)| train_box(task, &TrainConfig { variant, ..*config }))
        .collect::<Result<Vec<_>>>()?;
    let summaries = variants
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let slice: Vec<&TrainRecord> = records[i * tasks.len()..(i + 1) * tasks.len()].iter().collect();
            summarize(v, &slice)
        })
        .collect();
    Ok(ComparisonReport { summaries, records })
}

/// Long-format `variant,task,step,loss,iou` CSV.
pub fn curve_csv(records: &[TrainRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(invalid("no training records"));
    }
    let mut s = String::from("variant,task,step,loss,iou\n");
    for r in records {
        for p in &r.steps {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.variant,
                r.task_id,
                p.step,
                fmt_sig(p.loss),
                fmt_sig(p.iou)
            );
        }
    }
    Ok(s)
}

pub fn summary_csv(summaries: &[VariantSummary]) -> String {
    let mut s = String::from(
        "variant,tasks,successes,success_rate,median_steps,final_iou_min,final_iou_median,final_iou_mean,final_iou_max\n",
    );
    for v in summaries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            v.variant,
            v.tasks,
            v.successes,
            fmt_sig(v.success_rate),
            v.median_steps.map_or("inf".to_string(), fmt_sig),
            fmt_sig(v.final_iou_min),
            fmt_sig(v.final_iou_median),
            fmt_sig(v.final_iou_mean),
            fmt_sig(v.final_iou_max),
        );
    }
    s
}

/// Per-run outcomes: `variant,task,steps_to_success,final_iou,repairs,aborted`.
pub fn tasks_csv(records: &[TrainRecord]) -> String {
    let mut s = String::from("variant,task,steps_to_success,final_iou,repairs,aborted\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.variant,
            r.task_id,
            r.steps_to_success.map_or(String::new(), |v| v.to_string()),
            fmt_sig(r.final_iou()),
            r.repairs.len(),
            u8::from(r.aborted.is_some()),
        );
    }
    s
}
