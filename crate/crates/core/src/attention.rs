//! Forward passes for the global channel/spatial attention block and the
//! EMA-scored attention used to blend a sequence of feature maps.
//!
//! Channel attention permutes `C x H x W` to `W x H x C`, runs a two-layer
//! MLP (`C -> C/r -> C`, ReLU between) over the channel vector at every
//! spatial site, permutes back and squashes with a sigmoid. Spatial attention
//! is two same-padded convolutions (`C -> C/r -> C`, ReLU between) followed
//! by a sigmoid, with no pooling. The block output is
//! `F3 = Ms(F2) * F2` where `F2 = Mc(F1) * F1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::tensor::{softmax, Tensor};

/// `C x H x W` to `W x H x C`; its own inverse.
pub const CHANNEL_PERMUTATION: [usize; 3] = [2, 1, 0];

pub const DEFAULT_REDUCTION: usize = 4;
pub const DEFAULT_KERNEL: usize = 7;
const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct GomParams {
    channels: usize,
    reduction_ratio: usize,
    kernel_size: usize,
    /// `C/r x C`
    pub mlp_w1: Tensor,
    pub mlp_b1: Vec<f64>,
    /// `C x C/r`
    pub mlp_w2: Tensor,
    pub mlp_b2: Vec<f64>,
    /// `C/r x C x k x k`
    pub conv1_kernels: Tensor,
    /// `C x C/r x k x k`
    pub conv2_kernels: Tensor,
}

fn check_config(channels: usize, reduction_ratio: usize, kernel_size: usize) -> Result<usize> {
    if channels == 0 || reduction_ratio == 0 {
        return Err(invalid("channels and reduction ratio must be positive"));
    }
    if !channels.is_multiple_of(reduction_ratio) {
        return Err(invalid(format!(
            "channel count {channels} is not divisible by reduction ratio {reduction_ratio}"
        )));
    }
    if kernel_size.is_multiple_of(2) {
        return Err(invalid(format!("kernel size {kernel_size} must be odd")));
    }
    Ok(channels / reduction_ratio)
}

impl GomParams {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        reduction_ratio: usize,
        kernel_size: usize,
        mlp_w1: Tensor,
        mlp_b1: Vec<f64>,
        mlp_w2: Tensor,
        mlp_b2: Vec<f64>,
        conv1_kernels: Tensor,
        conv2_kernels: Tensor,
    ) -> Result<Self> {
        let channels = mlp_w1.shape().get(1).copied().unwrap_or(0);
        let hidden = check_config(channels, reduction_ratio, kernel_size)?;
        let k = kernel_size;
        let expect: [(&str, &[usize], Vec<usize>); 4] = [
            ("mlp_w1", mlp_w1.shape(), vec![hidden, channels]),
            ("mlp_w2", mlp_w2.shape(), vec![channels, hidden]),
            ("conv1", conv1_kernels.shape(), vec![hidden, channels, k, k]),
            ("conv2", conv2_kernels.shape(), vec![channels, hidden, k, k]),
        ];
        for (name, got, want) in expect {
            if got != want.as_slice() {
                return Err(Error::Shape(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        if mlp_b1.len() != hidden || mlp_b2.len() != channels {
            return Err(Error::Shape(format!(
                "MLP biases have lengths {} and {}, expected {hidden} and {channels}",
                mlp_b1.len(),
                mlp_b2.len()
            )));
        }
        Ok(Self {
            channels,
            reduction_ratio,
            kernel_size,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
            conv1_kernels,
            conv2_kernels,
        })
    }

    fn build(
        channels: usize,
        reduction_ratio: usize,
        kernel_size: usize,
        mut fill: impl FnMut() -> f64,
    ) -> Result<Self> {
        let hidden = check_config(channels, reduction_ratio, kernel_size)?;
        let k = kernel_size;
        let mut tensor = |shape: Vec<usize>| Tensor::from_fn(shape, |_| fill());
        let mlp_w1 = tensor(vec![hidden, channels])?;
        let mlp_w2 = tensor(vec![channels, hidden])?;
        let conv1 = tensor(vec![hidden, channels, k, k])?;
        let conv2 = tensor(vec![channels, hidden, k, k])?;
        let mlp_b1 = (0..hidden).map(|_| fill()).collect();
        let mlp_b2 = (0..channels).map(|_| fill()).collect();
        Self::from_parts(
            reduction_ratio,
            kernel_size,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
            conv1,
            conv2,
        )
    }

    /// Weights and biases drawn uniformly from (-0.1, 0.1).
    pub fn seeded(channels: usize, reduction_ratio: usize, kernel_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(channels, reduction_ratio, kernel_size, || {
            rng.gen_range(-INIT_RANGE..INIT_RANGE)
        })
    }

    pub fn zeros(channels: usize, reduction_ratio: usize, kernel_size: usize) -> Result<Self> {
        Self::build(channels, reduction_ratio, kernel_size, || 0.0)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn reduction_ratio(&self) -> usize {
        self.reduction_ratio
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    fn check_input(&self, f: &Tensor) -> Result<(usize, usize)> {
        match f.shape() {
            &[c, h, w] if c == self.channels => Ok((h, w)),
            s => Err(Error::Shape(format!(
                "expected a {} x H x W feature map, got {s:?}",
                self.channels
            ))),
        }
    }
}

fn add_row_bias(mut m: Tensor, bias: &[f64]) -> Result<Tensor> {
    let cols = bias.len();
    let data: Vec<f64> = m
        .data()
        .chunks(cols)
        .flat_map(|row| row.iter().zip(bias).map(|(x, b)| x + b))
        .collect();
    let shape = m.shape().to_vec();
    m = Tensor::new(shape, data)?;
    Ok(m)
}

/// Channel attention map `Mc(F1)`, same shape as the input, values in (0, 1).
pub fn channel_attention(f1: &Tensor, p: &GomParams) -> Result<Tensor> {
    let (h, w) = p.check_input(f1)?;
    let c = p.channels;
    let sites = f1.permute(&CHANNEL_PERMUTATION)?.reshape(vec![w * h, c])?;
    let hidden = add_row_bias(sites.matmul(&p.mlp_w1.permute(&[1, 0])?)?, &p.mlp_b1)?.relu();
    let out = add_row_bias(hidden.matmul(&p.mlp_w2.permute(&[1, 0])?)?, &p.mlp_b2)?;
    Ok(out.reshape(vec![w, h, c])?.permute(&CHANNEL_PERMUTATION)?.sigmoid())
}

/// Spatial attention map `Ms(F2)`, same shape as the input, values in (0, 1).
pub fn spatial_attention(f2: &Tensor, p: &GomParams) -> Result<Tensor> {
    p.check_input(f2)?;
    let hidden = f2.conv2d(&p.conv1_kernels)?.relu();
    Ok(hidden.conv2d(&p.conv2_kernels)?.sigmoid())
}

/// Replacement attention maps, for exercising the composition in isolation.
#[derive(Debug, Clone, Default)]
pub struct AttentionOverride {
    pub channel: Option<Tensor>,
    pub spatial: Option<Tensor>,
}

pub fn gom_forward(f1: &Tensor, p: &GomParams) -> Result<Tensor> {
    gom_forward_with(f1, p, &AttentionOverride::default())
}

pub fn gom_forward_with(f1: &Tensor, p: &GomParams, overrides: &AttentionOverride) -> Result<Tensor> {
    let mc = match &overrides.channel {
        Some(m) => m.clone(),
        None => channel_attention(f1, p)?,
    };
    let f2 = mc.hadamard(f1)?;
    let ms = match &overrides.spatial {
        Some(m) => m.clone(),
        None => spatial_attention(&f2, p)?,
    };
    ms.hadamard(&f2)
}

/// Score vector evolved by exponential moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaAttentionState {
    scores: Vec<f64>,
    decay: f64,
    step: u64,
}

impl EmaAttentionState {
    pub fn new(scores: Vec<f64>, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(invalid(format!("decay must lie in (0, 1], got {decay}")));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(invalid("attention scores must be finite"));
        }
        Ok(Self { scores, decay, step: 0 })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// One EMA step, `(1 - a) * prev + a * current`.
///
/// Evaluated as `prev + a * (current - prev)`, which keeps `current == prev`
/// a bit-exact fixed point; `a == 1` returns `current` exactly.
pub fn ema_blend(prev: f64, current: f64, decay: f64) -> f64 {
    if decay == 1.0 {
        current
    } else {
        prev + decay * (current - prev)
    }
}

pub fn ema_update(state: &EmaAttentionState, new_scores: &[f64]) -> Result<EmaAttentionState> {
    if new_scores.len() != state.scores.len() {
        return Err(invalid(format!(
            "expected {} scores, got {}",
            state.scores.len(),
            new_scores.len()
        )));
    }
    if new_scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("attention scores must be finite"));
    }
    Ok(EmaAttentionState {
        scores: state
            .scores
            .iter()
            .zip(new_scores)
            .map(|(&s, &n)| ema_blend(s, n, state.decay))
            .collect(),
        decay: state.decay,
        step: state.step + 1,
    })
}

/// Softmax of the current scores.
pub fn attention_weights(state: &EmaAttentionState) -> Vec<f64> {
    softmax(&state.scores)
}

/// Updates the scores, then returns the attention-weighted sum of `features`.
pub fn scm_forward(
    features: &[Tensor],
    state: &EmaAttentionState,
    new_scores: &[f64],
) -> Result<(Tensor, EmaAttentionState)> {
    if features.is_empty() {
        return Err(invalid("at least one feature tensor is required"));
    }
    if features.len() != state.len() {
        return Err(invalid(format!(
            "{} feature tensors for {} scores",
            features.len(),
            state.len()
        )));
    }
    let shape = features[0].shape();
    if let Some(bad) = features.iter().find(|f| f.shape() != shape) {
        return Err(Error::Shape(format!(
            "feature tensors differ in shape: {shape:?} vs {:?}",
            bad.shape()
        )));
    }
    let next = ema_update(state, new_scores)?;
    let weights = attention_weights(&next);
    let mut out = features[0].scale(weights[0]);
    for (f, &w) in features.iter().zip(&weights).skip(1) {
        out = out.add(&f.scale(w))?;
    }
    Ok((out, next))
}

/// Toy feature path mirroring the block placement in the detector neck:
/// global attention, then an identity stand-in for the pyramid pooling
/// stage, then EMA attention across the input sequence. Sequence scores come
/// from a linear head over each map's per-channel spatial means.
#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    pub gom: GomParams,
    pub score_head: Vec<f64>,
}

impl FeaturePipeline {
    pub fn seeded(channels: usize, reduction_ratio: usize, kernel_size: usize, seed: u64) -> Result<Self> {
        let gom = GomParams::seeded(channels, reduction_ratio, kernel_size, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5C0E_4EAD);
        let score_head = (0..channels).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect();
        Ok(Self { gom, score_head })
    }

    pub fn score(&self, feature: &Tensor) -> Result<f64> {
        let (h, w) = self.gom.check_input(feature)?;
        let plane = h * w;
        Ok(feature
            .data()
            .chunks(plane)
            .zip(&self.score_head)
            .map(|(ch, wt)| wt * ch.iter().sum::<f64>() / plane as f64)
            .sum())
    }

    pub fn forward(&self, frames: &[Tensor], state: &EmaAttentionState) -> Result<(Tensor, EmaAttentionState)> {
        let attended = frames
            .iter()
            .map(|f| gom_forward(f, &self.gom))
            .collect::<Result<Vec<_>>>()?;
        // pyramid pooling stage not modelled: identity
        let pooled = attended;
        let scores = pooled.iter().map(|f| self.score(f)).collect::<Result<Vec<_>>>()?;
        scm_forward(&pooled, state, &scores)
    }
}
