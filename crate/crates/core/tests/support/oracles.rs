//! Naive loops over flat NCHW buffers, written without touching the library kernels.

use std::collections::HashMap;

use cxr_core::arch::{LayerKind, LayerSpec};

#[derive(Debug, Clone, Copy)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

fn extent(input: usize, k: usize, s: usize, p: usize) -> usize {
    (input + 2 * p - k) / s + 1
}

fn tap(o: usize, s: usize, k: usize, p: usize, len: usize) -> Option<usize> {
    let i = (o * s + k) as isize - p as isize;
    (0..len as isize).contains(&i).then_some(i as usize)
}

/// Output element = `(0 + Σ_ic Σ_ky Σ_kx w·x) + b` in f32, padding skipped.
#[allow(clippy::too_many_arguments)]
pub fn conv_f32(x: &[f32], d: Dims, w: &[f32], c_out: usize, k: (usize, usize), b: &[f32], s: (usize, usize), p: (usize, usize)) -> (Vec<f32>, Dims) {
    let od = Dims {
        n: d.n,
        c: c_out,
        h: extent(d.h, k.0, s.0, p.0),
        w: extent(d.w, k.1, s.1, p.1),
    };
    let mut out = vec![0.0f32; od.n * od.c * od.h * od.w];
    for n in 0..d.n {
        for oc in 0..c_out {
            for oy in 0..od.h {
                for ox in 0..od.w {
                    let mut acc = 0.0f32;
                    for ic in 0..d.c {
                        for ky in 0..k.0 {
                            let Some(iy) = tap(oy, s.0, ky, p.0, d.h) else { continue };
                            for kx in 0..k.1 {
                                let Some(ix) = tap(ox, s.1, kx, p.1, d.w) else { continue };
                                acc += w[((oc * d.c + ic) * k.0 + ky) * k.1 + kx] * x[d.at(n, ic, iy, ix)];
                            }
                        }
                    }
                    out[od.at(n, oc, oy, ox)] = acc + b[oc];
                }
            }
        }
    }
    (out, od)
}

/// Same convolution in f64, plus the per-element sum of absolute terms.
#[allow(clippy::too_many_arguments)]
pub fn conv_f64(x: &[f32], d: Dims, w: &[f32], c_out: usize, k: (usize, usize), b: &[f32], s: (usize, usize), p: (usize, usize)) -> (Vec<f64>, Vec<f64>) {
    let oh = extent(d.h, k.0, s.0, p.0);
    let ow = extent(d.w, k.1, s.1, p.1);
    let mut out = Vec::new();
    let mut mag = Vec::new();
    for n in 0..d.n {
        for oc in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = f64::from(b[oc]);
                    let mut m = f64::from(b[oc]).abs();
                    for ic in 0..d.c {
                        for ky in 0..k.0 {
                            for kx in 0..k.1 {
                                if let (Some(iy), Some(ix)) = (tap(oy, s.0, ky, p.0, d.h), tap(ox, s.1, kx, p.1, d.w)) {
                                    let t = f64::from(w[((oc * d.c + ic) * k.0 + ky) * k.1 + kx]) * f64::from(x[d.at(n, ic, iy, ix)]);
                                    acc += t;
                                    m += t.abs();
                                }
                            }
                        }
                    }
                    out.push(acc);
                    mag.push(m);
                }
            }
        }
    }
    (out, mag)
}

/// Max or mean over the in-bounds part of each window, row-major.
pub fn pool_f32(x: &[f32], d: Dims, max: bool, k: (usize, usize), s: (usize, usize), p: (usize, usize)) -> (Vec<f32>, Dims) {
    let od = Dims {
        h: extent(d.h, k.0, s.0, p.0),
        w: extent(d.w, k.1, s.1, p.1),
        ..d
    };
    let mut out = vec![0.0f32; od.n * od.c * od.h * od.w];
    for n in 0..d.n {
        for c in 0..d.c {
            for oy in 0..od.h {
                for ox in 0..od.w {
                    let mut best = f32::NEG_INFINITY;
                    let mut sum = 0.0f32;
                    let mut count = 0usize;
                    for ky in 0..k.0 {
                        let Some(iy) = tap(oy, s.0, ky, p.0, d.h) else { continue };
                        for kx in 0..k.1 {
                            let Some(ix) = tap(ox, s.1, kx, p.1, d.w) else { continue };
                            let v = x[d.at(n, c, iy, ix)];
                            best = best.max(v);
                            sum += v;
                            count += 1;
                        }
                    }
                    out[od.at(n, c, oy, ox)] = if max { best } else { sum / count as f32 };
                }
            }
        }
    }
    (out, od)
}

pub fn gap_f32(x: &[f32], d: Dims) -> Vec<f32> {
    let mut out = Vec::with_capacity(d.n * d.c);
    for n in 0..d.n {
        for c in 0..d.c {
            let mut s = 0.0f32;
            for y in 0..d.h {
                for xx in 0..d.w {
                    s += x[d.at(n, c, y, xx)];
                }
            }
            out.push(s / (d.h * d.w) as f32);
        }
    }
    out
}

/// `rows × f` input against an `f × k` weight matrix.
pub fn dense_f32(x: &[f32], rows: usize, f: usize, w: &[f32], k: usize, b: &[f32]) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * k);
    for r in 0..rows {
        for j in 0..k {
            let mut acc = 0.0f32;
            for i in 0..f {
                acc += x[r * f + i] * w[i * k + j];
            }
            out.push(acc + b[j]);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn batchnorm_f32(x: &[f32], d: Dims, mean: &[f32], var: &[f32], gamma: &[f32], beta: &[f32], eps: f32) -> Vec<f32> {
    let mut out = x.to_vec();
    for n in 0..d.n {
        for c in 0..d.c {
            let denom = (var[c] + eps).sqrt();
            for y in 0..d.h {
                for xx in 0..d.w {
                    let i = d.at(n, c, y, xx);
                    out[i] = gamma[c] * (x[i] - mean[c]) / denom + beta[c];
                }
            }
        }
    }
    out
}

/// Mean softmax cross-entropy with the head evaluated entirely in f64.
pub fn head_loss_f64(x: &[f64], rows: usize, f: usize, w: &[f64], k: usize, b: &[f64], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for r in 0..rows {
        let z: Vec<f64> = (0..k).map(|j| b[j] + (0..f).map(|i| x[r * f + i] * w[i * k + j]).sum::<f64>()).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[labels[r]];
    }
    total / rows as f64
}

/// Probability that a random positive outranks a random negative, ties ½.
pub fn concordance(scores: &[f64], labels: &[usize], positive: usize) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != positive {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == positive {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// `(c, h, w)` of every layer, propagated from the input with the window formula.
pub fn propagate_shapes(layers: &[LayerSpec], input: (usize, usize, usize)) -> HashMap<String, (usize, usize, usize)> {
    let mut shapes: HashMap<String, (usize, usize, usize)> = HashMap::new();
    for l in layers {
        let of = |i: usize| shapes[&l.inputs[i]];
        let shape = match &l.kind {
            LayerKind::Input => input,
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (_, h, w) = of(0);
                (*out_channels, extent(h, kernel.0, stride.0, padding.0), extent(w, kernel.1, stride.1, padding.1))
            }
            LayerKind::MaxPool { kernel, stride, padding } | LayerKind::AvgPool { kernel, stride, padding } => {
                let (c, h, w) = of(0);
                (c, extent(h, kernel.0, stride.0, padding.0), extent(w, kernel.1, stride.1, padding.1))
            }
            LayerKind::GlobalAvgPool => (of(0).0, 1, 1),
            LayerKind::Dense { out_features } => (*out_features, 1, 1),
            LayerKind::Concat => {
                let (_, h, w) = of(0);
                ((0..l.inputs.len()).map(|i| of(i).0).sum(), h, w)
            }
            _ => of(0),
        };
        shapes.insert(l.id.clone(), shape);
    }
    shapes
}

/// Per-layer parameter counts: conv `(kh·kw·c_in + 1)·c_out`, dense
/// `(c·h·w + 1)·k`, batchnorm `4·c`, everything else 0.
pub fn parameter_oracle(layers: &[LayerSpec], input: (usize, usize, usize)) -> Vec<(String, usize)> {
    let shapes = propagate_shapes(layers, input);
    layers
        .iter()
        .map(|l| {
            let n = match &l.kind {
                LayerKind::Conv {
                    out_channels, kernel, ..
                } => (kernel.0 * kernel.1 * shapes[&l.inputs[0]].0 + 1) * out_channels,
                LayerKind::Dense { out_features } => {
                    let (c, h, w) = shapes[&l.inputs[0]];
                    (c * h * w + 1) * out_features
                }
                LayerKind::BatchNorm { .. } => 4 * shapes[&l.inputs[0]].0,
                _ => 0,
            };
            (l.id.clone(), n)
        })
        .collect()
}

/// `(c_in, c_out)` of the thirteen 3×3 convolutions of the VGG16 body.
pub const VGG16_BODY: [(usize, usize); 13] = [
    (3, 64),
    (64, 64),
    (64, 128),
    (128, 128),
    (128, 256),
    (256, 256),
    (256, 256),
    (256, 512),
    (512, 512),
    (512, 512),
    (512, 512),
    (512, 512),
    (512, 512),
];

pub fn vgg16_body_parameters() -> usize {
    VGG16_BODY.iter().map(|&(i, o)| (3 * 3 * i + 1) * o).sum()
}

/// Published classification report, two classes of 203 images each.
#[derive(Debug, Clone, Copy)]
pub struct PublishedReport {
    pub name: &'static str,
    /// Per class: precision, recall, f1 (2 d.p.).
    pub classes: [[f64; 3]; 2],
    pub support: [u64; 2],
    pub accuracy: f64,
    pub macro_avg: [f64; 3],
    pub weighted_avg: [f64; 3],
    /// Confusion matrix found by the integer search.
    pub matrix: [[u64; 2]; 2],
}

pub const PUBLISHED_REPORTS: [PublishedReport; 3] = [
    PublishedReport {
        name: "vgg16",
        classes: [[0.97, 0.97, 0.97], [0.97, 0.97, 0.97]],
        support: [203, 203],
        accuracy: 0.97,
        macro_avg: [0.97, 0.97, 0.97],
        weighted_avg: [0.97, 0.97, 0.97],
        matrix: [[197, 6], [6, 197]],
    },
    PublishedReport {
        name: "resnet50",
        classes: [[0.95, 0.93, 0.94], [0.93, 0.95, 0.94]],
        support: [203, 203],
        accuracy: 0.94,
        macro_avg: [0.94, 0.94, 0.94],
        weighted_avg: [0.94, 0.94, 0.94],
        matrix: [[189, 14], [10, 193]],
    },
    PublishedReport {
        name: "inception_v3",
        classes: [[0.98, 0.89, 0.93], [0.90, 0.98, 0.94]],
        support: [203, 203],
        accuracy: 0.94,
        macro_avg: [0.94, 0.94, 0.94],
        weighted_avg: [0.94, 0.94, 0.94],
        matrix: [[181, 22], [4, 199]],
    },
];

/// Values are compared after rounding both sides to hundredths as integers.
fn same_2dp(a: f64, b: f64) -> bool {
    (a * 100.0).round() as i64 == (b * 100.0).round() as i64
}

pub fn report_matches(r: &cxr_core::eval::ClassificationReport, t: &PublishedReport) -> bool {
    let triple = |p: f64, rc: f64, f: f64, want: &[f64; 3]| same_2dp(p, want[0]) && same_2dp(rc, want[1]) && same_2dp(f, want[2]);
    r.classes.len() == 2
        && r.classes.iter().zip(&t.classes).zip(&t.support).all(|((c, want), &s)| {
            c.support == s && triple(c.precision.rounded, c.recall.rounded, c.f1.rounded, want)
        })
        && same_2dp(r.accuracy.rounded, t.accuracy)
        && triple(r.macro_avg.precision.rounded, r.macro_avg.recall.rounded, r.macro_avg.f1.rounded, &t.macro_avg)
        && triple(
            r.weighted_avg.precision.rounded,
            r.weighted_avg.recall.rounded,
            r.weighted_avg.f1.rounded,
            &t.weighted_avg,
        )
}

/// Every 2×2 matrix with the published row supports whose report matches at 2 d.p.
pub fn search_matrices(t: &PublishedReport) -> Vec<[[u64; 2]; 2]> {
    let [r0, r1] = t.support;
    let mut found = Vec::new();
    for tp0 in 0..=r0 {
        for tp1 in 0..=r1 {
            let m = [[tp0, r0 - tp0], [r1 - tp1, tp1]];
            let cm = cxr_core::eval::ConfusionMatrix::from_counts(m.iter().map(|r| r.to_vec()).collect(), vec!["0".into(), "1".into()])
                .expect("2x2");
            if let Ok(r) = cxr_core::eval::report(&cm) {
                if report_matches(&r, t) {
                    found.push(m);
                }
            }
        }
    }
    found
}
