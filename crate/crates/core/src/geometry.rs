//! Axis-aligned boxes and the IoU loss family (IoU, CIoU, EIoU, AIoU) with
//! analytic gradients with respect to the predicted corners.
//!
//! All losses share one enclosure/overlap computation. The CIoU trade-off
//! weight `alpha = v / ((1 - IoU) + v)` is treated as a constant when
//! differentiating.
//!
//! Subgradient conventions at ties:
//! - enclosing box: when a pred edge coincides with the matching gt edge, the
//!   pred edge is taken to determine the enclosure;
//! - overlap: when corresponding edges coincide, each side contributes half,
//!   which makes the gradient vanish exactly at `pred == gt`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Corner-form box `(x1, y1, x2, y2)` with `x2 > x1`, `y2 > y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    /// Skips validation. Operations on the result re-check and fail on degenerate boxes.
    pub const fn new_unchecked(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn is_valid(&self) -> bool {
        let c = self.to_array();
        c.iter().all(|v| v.is_finite()) && self.x2 > self.x1 && self.y2 > self.y1
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::DegenerateBox {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
            })
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new_unchecked(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new_unchecked(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x1, self.y1, self.x2, self.y2)
    }
}

impl FromStr for BBox {
    type Err = Error;

    /// Parses `x1,y1,x2,y2`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(invalid(format!("expected x1,y1,x2,y2, got {s:?}")));
        }
        let mut c = [0.0; 4];
        for (dst, p) in c.iter_mut().zip(&parts) {
            *dst = p
                .parse()
                .map_err(|_| invalid(format!("not a number: {p:?} in {s:?}")))?;
        }
        Self::from_array(c)
    }
}

/// Smallest enclosing box of a prediction/target pair, plus the squared
/// center distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnclosureGeometry {
    /// Diagonal length.
    pub c: f64,
    pub c_w: f64,
    pub c_h: f64,
    pub rho2_center: f64,
}

impl EnclosureGeometry {
    pub fn of(a: &BBox, b: &BBox) -> Self {
        let c_w = a.x2.max(b.x2) - a.x1.min(b.x1);
        let c_h = a.y2.max(b.y2) - a.y1.min(b.y1);
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        Self {
            c: c_w.hypot(c_h),
            c_w,
            c_h,
            rho2_center: (ax - bx).powi(2) + (ay - by).powi(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Iou,
    Ciou,
    Eiou,
    Aiou,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [Self::Iou, Self::Ciou, Self::Eiou, Self::Aiou];

    pub fn name(self) -> &'static str {
        match self {
            Self::Iou => "iou",
            Self::Ciou => "ciou",
            Self::Eiou => "eiou",
            Self::Aiou => "aiou",
        }
    }

    fn has_aspect(self) -> bool {
        matches!(self, Self::Ciou | Self::Aiou)
    }

    fn has_width_height(self) -> bool {
        matches!(self, Self::Eiou | Self::Aiou)
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iou" => Ok(Self::Iou),
            "ciou" => Ok(Self::Ciou),
            "eiou" => Ok(Self::Eiou),
            "aiou" => Ok(Self::Aiou),
            _ => Err(invalid(format!(
                "unknown loss variant {s:?} (expected iou, ciou, eiou or aiou)"
            ))),
        }
    }
}

/// Additive breakdown of a loss value. Terms a variant does not use are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// `1 - IoU`
    pub overlap: f64,
    /// Center distance over squared enclosure diagonal.
    pub center: f64,
    /// `alpha * v`
    pub aspect: f64,
    pub width: f64,
    pub height: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.overlap + self.center + self.aspect + self.width + self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub variant: LossVariant,
    pub value: f64,
    pub iou: f64,
    /// d(loss) / d(x1, y1, x2, y2) of the predicted box.
    pub grad: [f64; 4],
    pub terms: LossTerms,
    /// CIoU trade-off weight (0 for variants without the aspect term).
    pub alpha: f64,
    /// Aspect-ratio consistency `v`.
    pub v: f64,
}

/// Value and corner gradient of a scalar.
#[derive(Debug, Clone, Copy, Default)]
struct Dual {
    val: f64,
    grad: [f64; 4],
}

impl Dual {
    fn constant(val: f64) -> Self {
        Self { val, grad: [0.0; 4] }
    }

    fn ratio(num: Dual, den: Dual) -> Dual {
        let val = num.val / den.val;
        let grad = std::array::from_fn(|k| (num.grad[k] - val * den.grad[k]) / den.val);
        Dual { val, grad }
    }

    fn square(self) -> Dual {
        let mut grad = self.grad;
        for g in &mut grad {
            *g *= 2.0 * self.val;
        }
        Dual {
            val: self.val * self.val,
            grad,
        }
    }

    fn add(self, o: Dual) -> Dual {
        let mut grad = self.grad;
        for (g, og) in grad.iter_mut().zip(o.grad) {
            *g += og;
        }
        Dual {
            val: self.val + o.val,
            grad,
        }
    }

    fn sub(self, o: Dual) -> Dual {
        self.add(o.scale(-1.0))
    }

    fn scale(self, k: f64) -> Dual {
        let mut grad = self.grad;
        for g in &mut grad {
            *g *= k;
        }
        Dual {
            val: self.val * k,
            grad,
        }
    }

    fn mul(self, o: Dual) -> Dual {
        let grad = std::array::from_fn(|k| self.grad[k] * o.val + self.val * o.grad[k]);
        Dual {
            val: self.val * o.val,
            grad,
        }
    }
}

/// Per-axis quantities for one coordinate pair (x or y). `lo`/`hi` index into
/// the 4-vector gradient.
struct Axis {
    size: Dual,
    overlap: Dual,
    span: Dual,
    center_offset: Dual,
}

fn axis(p1: f64, p2: f64, g1: f64, g2: f64, lo: usize, hi: usize) -> Axis {
    let mut size = Dual::constant(p2 - p1);
    size.grad[lo] = -1.0;
    size.grad[hi] = 1.0;

    // overlap = min(p2, g2) - max(p1, g1), clipped at 0
    let raw = p2.min(g2) - p1.max(g1);
    let mut overlap = Dual::constant(raw.max(0.0));
    if raw > 0.0 {
        overlap.grad[lo] = -tie_weight(p1, g1, |a, b| a > b);
        overlap.grad[hi] = tie_weight(p2, g2, |a, b| a < b);
    }

    // span = max(p2, g2) - min(p1, g1); pred edge wins ties
    let mut span = Dual::constant(p2.max(g2) - p1.min(g1));
    if p1 <= g1 {
        span.grad[lo] = -1.0;
    }
    if p2 >= g2 {
        span.grad[hi] = 1.0;
    }

    let mut center_offset = Dual::constant(0.5 * (p1 + p2) - 0.5 * (g1 + g2));
    center_offset.grad[lo] = 0.5;
    center_offset.grad[hi] = 0.5;

    Axis {
        size,
        overlap,
        span,
        center_offset,
    }
}

/// 1 if the pred edge strictly determines the overlap boundary, 0 if the gt
/// edge does, 1/2 on a tie.
fn tie_weight(p: f64, g: f64, pred_wins: impl Fn(f64, f64) -> bool) -> f64 {
    if p == g {
        0.5
    } else if pred_wins(p, g) {
        1.0
    } else {
        0.0
    }
}

fn overlap_dual(pred: &BBox, gt: &BBox) -> (Dual, Axis, Axis) {
    let ax = axis(pred.x1, pred.x2, gt.x1, gt.x2, 0, 2);
    let ay = axis(pred.y1, pred.y2, gt.y1, gt.y2, 1, 3);
    let inter = ax.overlap.mul(ay.overlap);
    let pred_area = ax.size.mul(ay.size);
    let union = pred_area.add(Dual::constant(gt.area())).sub(inter);
    (Dual::ratio(inter, union), ax, ay)
}

/// Intersection over union. Errors if either box is degenerate.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    Ok(inter / (a.area() + b.area() - inter))
}

/// Aspect-ratio consistency `v` and its corner gradient.
fn aspect_dual(ax: &Axis, ay: &Axis, gt: &BBox) -> Dual {
    let (w, h) = (ax.size.val, ay.size.val);
    let delta = (gt.width() / gt.height()).atan() - (w / h).atan();
    let k = 4.0 / (PI * PI);
    let val = k * delta * delta;
    // d atan(w/h) / dw = h / (w² + h²), / dh = -w / (w² + h²)
    let denom = w * w + h * h;
    let dv_dw = -2.0 * k * delta * h / denom;
    let dv_dh = 2.0 * k * delta * w / denom;
    let grad = std::array::from_fn(|i| dv_dw * ax.size.grad[i] + dv_dh * ay.size.grad[i]);
    Dual { val, grad }
}

fn trade_off(v: f64, iou: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v / ((1.0 - iou) + v)
    }
}

/// Shared kernel for all variants. `frozen_alpha` replaces the computed CIoU
/// trade-off weight; used for finite-difference checks.
pub fn loss_with_alpha(variant: LossVariant, pred: &BBox, gt: &BBox, frozen_alpha: Option<f64>) -> Result<LossReport> {
    pred.validate()?;
    gt.validate()?;

    let (iou_d, ax, ay) = overlap_dual(pred, gt);
    let overlap = Dual::constant(1.0).sub(iou_d);

    let mut terms = LossTerms {
        overlap: overlap.val,
        ..LossTerms::default()
    };
    let mut total = overlap;
    let mut alpha = 0.0;
    let mut v = 0.0;

    if variant != LossVariant::Iou {
        let diag2 = ax.span.square().add(ay.span.square());
        let rho2 = ax.center_offset.square().add(ay.center_offset.square());
        let center = Dual::ratio(rho2, diag2);
        terms.center = center.val;
        total = total.add(center);
    }

    if variant.has_aspect() {
        let vd = aspect_dual(&ax, &ay, gt);
        v = vd.val;
        alpha = frozen_alpha.unwrap_or_else(|| trade_off(vd.val, iou_d.val));
        let aspect = vd.scale(alpha);
        terms.aspect = aspect.val;
        total = total.add(aspect);
    }

    if variant.has_width_height() {
        let dw = ax.size.sub(Dual::constant(gt.width()));
        let dh = ay.size.sub(Dual::constant(gt.height()));
        let width = Dual::ratio(dw.square(), ax.span.square());
        let height = Dual::ratio(dh.square(), ay.span.square());
        terms.width = width.val;
        terms.height = height.val;
        total = total.add(width).add(height);
    }

    Ok(LossReport {
        variant,
        value: terms.total(),
        iou: iou_d.val,
        grad: total.grad,
        terms,
        alpha,
        v,
    })
}

pub fn loss(variant: LossVariant, pred: &BBox, gt: &BBox) -> Result<LossReport> {
    loss_with_alpha(variant, pred, gt, None)
}

pub fn iou_loss(pred: &BBox, gt: &BBox) -> Result<LossReport> {
    loss(LossVariant::Iou, pred, gt)
}

pub fn ciou_loss(pred: &BBox, gt: &BBox) -> Result<LossReport> {
    loss(LossVariant::Ciou, pred, gt)
}

pub fn eiou_loss(pred: &BBox, gt: &BBox) -> Result<LossReport> {
    loss(LossVariant::Eiou, pred, gt)
}

pub fn aiou_loss(pred: &BBox, gt: &BBox) -> Result<LossReport> {
    loss(LossVariant::Aiou, pred, gt)
}
