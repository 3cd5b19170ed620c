//! Forward kernels for every layer kind the architectures use.
//!
//! Each output element is reduced in a fixed order so results are bitwise
//! reproducible regardless of how many worker threads run the batch:
//!
//! * conv: `((0 + Σ_ic Σ_kh Σ_kw w·x) + bias)`, terms ascending, padding skipped
//! * avg pool / global average: row-major window sum, then one division by
//!   the number of in-bounds elements
//! * batchnorm: `gamma * (x - mean) / sqrt(var + eps) + beta`, evaluated left to right
//! * add merge: inputs summed in argument order

use rayon::prelude::*;

use crate::tensor::{Tensor, TensorError};

/// Spatial pair `(height, width)`.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `(c_out, c_in, k_h, k_w)`
    pub weights: Tensor,
    pub bias: Vec<f32>,
    pub stride: Pair,
    pub padding: Pair,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Vec<f32>, stride: Pair, padding: Pair) -> Result<Self, TensorError> {
        let p = Self {
            weights,
            bias,
            stride,
            padding,
        };
        p.check()?;
        Ok(p)
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> Pair {
        let s = self.weights.shape();
        (s[2], s[3])
    }

    fn check(&self) -> Result<(), TensorError> {
        let [c_out, _, kh, kw] = self.weights.shape();
        if kh == 0 || kw == 0 {
            return Err(TensorError::InvalidParam {
                op: "conv2d",
                what: "kernel extent must be >= 1".into(),
            });
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(TensorError::InvalidParam {
                op: "conv2d",
                what: "stride must be >= 1".into(),
            });
        }
        if self.bias.len() != c_out {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "bias",
                expected: c_out,
                got: self.bias.len(),
            });
        }
        Ok(())
    }
}

/// Output extent of a sliding window along one axis: `⌊(in + 2p − k)/s⌋ + 1`.
pub fn window_out(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn out_extent(op: &'static str, dim: &'static str, input: usize, k: usize, s: usize, p: usize) -> Result<usize, TensorError> {
    window_out(input, k, s, p).ok_or(TensorError::KernelTooLarge {
        op,
        dim,
        kernel: k,
        extent: input + 2 * p,
    })
}

/// Range of output positions along one axis whose tap `k` lands inside the input.
#[inline]
fn valid_range(out_len: usize, in_len: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    // input index = o * stride + tap - pad must lie in [0, in_len)
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > tap {
        ((in_len + pad - tap - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv2d_forward(input: &Tensor, p: &ConvParams) -> Result<Tensor, TensorError> {
    p.check()?;
    let [n, c_in, h, w] = input.shape();
    if c_in != p.in_channels() {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            dim: "input channels",
            expected: p.in_channels(),
            got: c_in,
        });
    }
    let (kh, kw) = p.kernel();
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let oh = out_extent("conv2d", "height", h, kh, sh, ph)?;
    let ow = out_extent("conv2d", "width", w, kw, sw, pw)?;
    let c_out = p.out_channels();
    let mut out = Tensor::zeros([n, c_out, oh, ow]);
    let out_per = c_out * oh * ow;
    if out_per == 0 {
        return Ok(out);
    }
    let weights = p.weights.data();

    out.data_mut()
        .par_chunks_mut(out_per)
        .enumerate()
        .for_each(|(ni, out_sample)| {
            let in_sample = input.sample(ni);
            for oc in 0..c_out {
                let out_plane = &mut out_sample[oc * oh * ow..(oc + 1) * oh * ow];
                for ic in 0..c_in {
                    let in_plane = &in_sample[ic * h * w..(ic + 1) * h * w];
                    let wbase = (oc * c_in + ic) * kh * kw;
                    for ky in 0..kh {
                        let (oy_lo, oy_hi) = valid_range(oh, h, ky, sh, ph);
                        for kx in 0..kw {
                            let wv = weights[wbase + ky * kw + kx];
                            let (ox_lo, ox_hi) = valid_range(ow, w, kx, sw, pw);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            for oy in oy_lo..oy_hi {
                                let iy = oy * sh + ky - ph;
                                let in_row = &in_plane[iy * w..(iy + 1) * w];
                                let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                                if sw == 1 {
                                    let ix0 = ox_lo + kx - pw;
                                    let src = &in_row[ix0..ix0 + (ox_hi - ox_lo)];
                                    for (o, &x) in out_row[ox_lo..ox_hi].iter_mut().zip(src) {
                                        *o += wv * x;
                                    }
                                } else {
                                    for ox in ox_lo..ox_hi {
                                        out_row[ox] += wv * in_row[ox * sw + kx - pw];
                                    }
                                }
                            }
                        }
                    }
                }
                let b = p.bias[oc];
                for o in out_plane.iter_mut() {
                    *o += b;
                }
            }
        });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolParams {
    pub kind: PoolKind,
    pub kernel: Pair,
    pub stride: Pair,
    /// Padded positions never contribute: they are skipped by max pooling and
    /// excluded from the average's element count.
    pub padding: Pair,
}

impl PoolParams {
    pub fn new(kind: PoolKind, kernel: Pair, stride: Pair) -> Self {
        Self {
            kind,
            kernel,
            stride,
            padding: (0, 0),
        }
    }

    pub fn with_padding(mut self, padding: Pair) -> Self {
        self.padding = padding;
        self
    }
}

pub fn pool2d_forward(input: &Tensor, p: PoolParams) -> Result<Tensor, TensorError> {
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
        return Err(TensorError::InvalidParam {
            op: "pool2d",
            what: "kernel and stride must be >= 1".into(),
        });
    }
    if ph >= kh || pw >= kw {
        return Err(TensorError::InvalidParam {
            op: "pool2d",
            what: "padding must be smaller than the kernel".into(),
        });
    }
    let [n, c, h, w] = input.shape();
    let oh = out_extent("pool2d", "height", h, kh, sh, ph)?;
    let ow = out_extent("pool2d", "width", w, kw, sw, pw)?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let data = input.data();
    for plane in 0..n * c {
        let src = &data[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            let y0 = (oy * sh) as isize - ph as isize;
            let ys = y0.max(0) as usize..((y0 + kh as isize).min(h as isize)).max(0) as usize;
            for ox in 0..ow {
                let x0 = (ox * sw) as isize - pw as isize;
                let xs = x0.max(0) as usize..((x0 + kw as isize).min(w as isize)).max(0) as usize;
                let v = match p.kind {
                    PoolKind::Max => {
                        let mut m = f32::NEG_INFINITY;
                        for y in ys.clone() {
                            for x in xs.clone() {
                                m = m.max(src[y * w + x]);
                            }
                        }
                        m
                    }
                    PoolKind::Avg => {
                        let mut s = 0.0f32;
                        for y in ys.clone() {
                            for x in xs.clone() {
                                s += src[y * w + x];
                            }
                        }
                        s / (ys.len() * xs.len()) as f32
                    }
                };
                out.push(v);
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

/// Per-channel spatial mean, `(n, c, h, w) → (n, c, 1, 1)`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor, TensorError> {
    let [n, c, h, w] = input.shape();
    if h == 0 || w == 0 {
        return Err(TensorError::Empty { op: "global_avg_pool" });
    }
    let hw = h * w;
    let out = input
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().fold(0.0f32, |s, &x| s + x) / hw as f32)
        .collect();
    Tensor::new([n, c, 1, 1], out)
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place(t: &mut Tensor) {
    for x in t.data_mut() {
        *x = if *x > 0.0 { *x } else { 0.0 };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
}

pub fn batchnorm_inference(input: &Tensor, p: &BatchNormParams) -> Result<Tensor, TensorError> {
    let [_, c, h, w] = input.shape();
    for (dim, len) in [("mean", p.mean.len()), ("var", p.var.len()), ("gamma", p.gamma.len()), ("beta", p.beta.len())] {
        if len != c {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm",
                dim,
                expected: c,
                got: len,
            });
        }
    }
    if !(p.eps > 0.0) {
        return Err(TensorError::InvalidParam {
            op: "batchnorm",
            what: format!("eps must be positive, got {}", p.eps),
        });
    }
    if let Some(v) = p.var.iter().find(|v| !(**v >= 0.0)) {
        return Err(TensorError::InvalidParam {
            op: "batchnorm",
            what: format!("variance must be non-negative, got {v}"),
        });
    }
    let denom: Vec<f32> = p.var.iter().map(|v| (v + p.eps).sqrt()).collect();
    let mut out = input.clone();
    let hw = h * w;
    if hw == 0 {
        return Ok(out);
    }
    for (i, plane) in out.data_mut().chunks_exact_mut(hw).enumerate() {
        let ch = i % c;
        let (g, m, d, b) = (p.gamma[ch], p.mean[ch], denom[ch], p.beta[ch]);
        for x in plane {
            *x = g * (*x - m) / d + b;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeKind {
    Add,
    ConcatChannels,
}

pub fn merge(inputs: &[&Tensor], kind: MergeKind) -> Result<Tensor, TensorError> {
    let first = inputs.first().ok_or(TensorError::Empty { op: "merge" })?;
    let [n, _, h, w] = first.shape();
    match kind {
        MergeKind::Add => {
            for t in &inputs[1..] {
                check_dims("merge(add)", first.shape(), t.shape(), &[0, 1, 2, 3])?;
            }
            let mut out = (*first).clone();
            for t in &inputs[1..] {
                for (o, x) in out.data_mut().iter_mut().zip(t.data()) {
                    *o += x;
                }
            }
            Ok(out)
        }
        MergeKind::ConcatChannels => {
            for t in &inputs[1..] {
                check_dims("merge(concat)", first.shape(), t.shape(), &[0, 2, 3])?;
            }
            let total_c: usize = inputs.iter().map(|t| t.channels()).sum();
            let mut data = Vec::with_capacity(n * total_c * h * w);
            for ni in 0..n {
                for t in inputs {
                    data.extend_from_slice(t.sample(ni));
                }
            }
            Tensor::new([n, total_c, h, w], data)
        }
    }
}

fn check_dims(op: &'static str, want: [usize; 4], got: [usize; 4], axes: &[usize]) -> Result<(), TensorError> {
    const NAMES: [&str; 4] = ["batch", "channels", "height", "width"];
    for &a in axes {
        if want[a] != got[a] {
            return Err(TensorError::ShapeMismatch {
                op,
                dim: NAMES[a],
                expected: want[a],
                got: got[a],
            });
        }
    }
    Ok(())
}
