//! Dense row-major `f64` tensors with the handful of forward operations the
//! attention blocks are built from. No views, no broadcasting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor must have rank >= 1".into()));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
    }
    Ok(shape.iter().product())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    /// Builds a tensor by evaluating `f` at every flat (row-major) index.
    pub fn from_fn(shape: Vec<usize>, f: impl FnMut(usize) -> f64) -> Result<Self> {
        let n = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: (0..n).map(f).collect(),
        })
    }

    /// Elements drawn uniformly from `[lo, hi)` with a seeded ChaCha8 stream.
    pub fn seeded_uniform(shape: Vec<usize>, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(invalid(format!("bad uniform range [{lo}, {hi})")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        if index.len() != self.rank() || index.iter().zip(&self.shape).any(|(&i, &d)| i >= d) {
            return None;
        }
        let flat: usize = index.iter().zip(strides(&self.shape)).map(|(i, s)| i * s).sum();
        Some(self.data[flat])
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{op} of {:?} and {:?}", self.shape, other.shape)));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|x| k * x)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn relu(&self) -> Self {
        self.map(|x| x.max(0.0))
    }

    /// Reorders dimensions so that output dimension `i` is input dimension `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank {
            return Err(Error::InvalidArgument(format!(
                "permutation {axes:?} does not match rank {rank}"
            )));
        }
        for &a in axes {
            if a >= rank || seen[a] {
                return Err(Error::InvalidArgument(format!(
                    "{axes:?} is not a permutation of 0..{rank}"
                )));
            }
            seen[a] = true;
        }

        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides = strides(&self.shape);
        // stride in the source for each output dimension
        let walk: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();

        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; rank];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[src]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                src += walk[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                src -= walk[d] * idx[d];
                idx[d] = 0;
            }
        }
        Ok(Self { shape: out_shape, data })
    }

    /// Rank-2 matrix product.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Self> {
        if self.rank() != 2 || rhs.rank() != 2 {
            return Err(Error::InvalidArgument(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, rhs.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(Error::Shape(format!("matmul of {:?} and {:?}", self.shape, rhs.shape)));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            let dst = &mut out[i * n..(i + 1) * n];
            for (p, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let src = &rhs.data[p * n..(p + 1) * n];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Same-size 2-D cross-correlation with zero padding.
    ///
    /// `self` is `C x H x W`, `kernels` is `K x C x kh x kw` with odd `kh`, `kw`.
    /// Returns `K x H x W`.
    pub fn conv2d(&self, kernels: &Tensor) -> Result<Self> {
        if self.rank() != 3 || kernels.rank() != 4 {
            return Err(Error::InvalidArgument(format!(
                "conv2d expects C x H x W input and K x C x kh x kw kernels, got {:?} and {:?}",
                self.shape, kernels.shape
            )));
        }
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let (k, kc, kh, kw) = (kernels.shape[0], kernels.shape[1], kernels.shape[2], kernels.shape[3]);
        if kc != c {
            return Err(Error::Shape(format!(
                "kernels expect {kc} input channels, input has {c}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size {kh}x{kw} must be odd for same padding"
            )));
        }
        let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
        let mut out = vec![0.0; k * h * w];
        for o in 0..k {
            for ci in 0..c {
                let plane = &self.data[ci * h * w..(ci + 1) * h * w];
                let kbase = (o * c + ci) * kh * kw;
                for dy in 0..kh {
                    for dx in 0..kw {
                        let kv = kernels.data[kbase + dy * kw + dx];
                        if kv == 0.0 {
                            continue;
                        }
                        let oy = dy as isize - ph;
                        let ox = dx as isize - pw;
                        for y in 0..h {
                            let sy = y as isize + oy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                            let dst_row = &mut out[(o * h + y) * w..(o * h + y + 1) * w];
                            for (x, d) in dst_row.iter_mut().enumerate() {
                                let sx = x as isize + ox;
                                if sx >= 0 && sx < w as isize {
                                    *d += kv * src_row[sx as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Self {
            shape: vec![k, h, w],
            data: out,
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax. Returns an empty vector for empty input.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
