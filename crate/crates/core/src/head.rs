//! The trainable classification head: dense layer, softmax and the exact
//! softmax cross-entropy gradient.

use crate::tensor::{Matrix, Tensor, TensorError};

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Gradients of the mean cross-entropy with respect to the head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    /// Same shape as the dense weights, `(f, k)`.
    pub d_weights: Matrix,
    pub d_bias: Vec<f32>,
    pub loss: f64,
}

/// `output = input · weights + bias`, where `input` is flattened to `(n, f)`.
///
/// Each output element is `(Σ_f x·w) + b` with the sum taken in ascending
/// feature order starting from zero.
pub fn dense_forward(input: &Tensor, weights: &Matrix, bias: &[f32]) -> Result<Matrix, TensorError> {
    dense_matrix(&input.flatten(), weights, bias)
}

pub fn dense_matrix(input: &Matrix, weights: &Matrix, bias: &[f32]) -> Result<Matrix, TensorError> {
    let (n, f) = (input.rows(), input.cols());
    if weights.rows() != f {
        return Err(TensorError::ShapeMismatch {
            op: "dense",
            dim: "features",
            expected: weights.rows(),
            got: f,
        });
    }
    let k = weights.cols();
    if bias.len() != k {
        return Err(TensorError::ShapeMismatch {
            op: "dense",
            dim: "bias",
            expected: k,
            got: bias.len(),
        });
    }
    let mut out = Vec::with_capacity(n * k);
    for r in 0..n {
        let x = input.row(r);
        for (j, b) in bias.iter().enumerate() {
            let mut acc = 0.0f32;
            for (fi, &xv) in x.iter().enumerate() {
                acc += xv * weights.get(fi, j);
            }
            out.push(acc + b);
        }
    }
    Matrix::new(n, k, out)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    let k = logits.cols();
    if k == 0 {
        return out;
    }
    for row in out.data_mut().chunks_exact_mut(k) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut s = 0.0f32;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            s += *x;
        }
        for x in row.iter_mut() {
            *x /= s;
        }
    }
    out
}

/// Softmax of one row computed in `f64`.
fn softmax_row_f64(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy of `probs` against one-hot `labels`.
pub fn cross_entropy(probs: &Matrix, labels: &Matrix) -> Result<f64, TensorError> {
    same_shape("cross_entropy", probs, labels)?;
    let n = probs.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0f64;
    for (p, y) in probs.data().iter().zip(labels.data()) {
        if *y != 0.0 {
            total -= f64::from(*y) * f64::from(*p).max(PROB_FLOOR).ln();
        }
    }
    Ok(total / n as f64)
}

/// Loss and parameter gradients for the dense → softmax → cross-entropy head.
///
/// With `p = softmax(x·W + b)` and one-hot `y`:
/// `d_logits = (p − y)/n`, `d_W = xᵀ·d_logits`, `d_b = Σ_rows d_logits`.
/// Internally accumulated in `f64`; results are rounded to `f32` once.
pub fn head_backward(features: &Matrix, labels: &Matrix, weights: &Matrix, bias: &[f32]) -> Result<HeadGradients, TensorError> {
    let (n, f) = (features.rows(), features.cols());
    let k = weights.cols();
    if weights.rows() != f {
        return Err(TensorError::ShapeMismatch {
            op: "head_backward",
            dim: "features",
            expected: weights.rows(),
            got: f,
        });
    }
    if bias.len() != k {
        return Err(TensorError::ShapeMismatch {
            op: "head_backward",
            dim: "bias",
            expected: k,
            got: bias.len(),
        });
    }
    if labels.rows() != n {
        return Err(TensorError::ShapeMismatch {
            op: "head_backward",
            dim: "label rows",
            expected: n,
            got: labels.rows(),
        });
    }
    if labels.cols() != k {
        return Err(TensorError::ShapeMismatch {
            op: "head_backward",
            dim: "classes",
            expected: k,
            got: labels.cols(),
        });
    }
    if n == 0 {
        return Err(TensorError::Empty { op: "head_backward" });
    }

    let inv_n = 1.0 / n as f64;
    let mut dw = vec![0.0f64; f * k];
    let mut db = vec![0.0f64; k];
    let mut loss = 0.0f64;
    let mut logits = vec![0.0f64; k];
    for r in 0..n {
        let x = features.row(r);
        for (j, z) in logits.iter_mut().enumerate() {
            let mut acc = f64::from(bias[j]);
            for (fi, &xv) in x.iter().enumerate() {
                acc += f64::from(xv) * f64::from(weights.get(fi, j));
            }
            *z = acc;
        }
        let p = softmax_row_f64(&logits);
        let y = labels.row(r);
        for j in 0..k {
            let yj = f64::from(y[j]);
            if yj != 0.0 {
                loss -= yj * p[j].max(PROB_FLOOR).ln();
            }
            let g = (p[j] - yj) * inv_n;
            db[j] += g;
            for (fi, &xv) in x.iter().enumerate() {
                dw[fi * k + j] += f64::from(xv) * g;
            }
        }
    }
    Ok(HeadGradients {
        d_weights: Matrix::new(f, k, dw.into_iter().map(|v| v as f32).collect())?,
        d_bias: db.into_iter().map(|v| v as f32).collect(),
        loss: loss * inv_n,
    })
}

/// Builds an `(n, k)` one-hot matrix from class indices.
pub fn one_hot(labels: &[usize], k: usize) -> Result<Matrix, TensorError> {
    let mut m = Matrix::zeros(labels.len(), k);
    for (r, &c) in labels.iter().enumerate() {
        if c >= k {
            return Err(TensorError::InvalidParam {
                op: "one_hot",
                what: format!("class index {c} out of range for {k} classes"),
            });
        }
        m.set(r, c, 1.0);
    }
    Ok(m)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(), TensorError> {
    if a.rows() != b.rows() {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: "rows",
            expected: a.rows(),
            got: b.rows(),
        });
    }
    if a.cols() != b.cols() {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: "cols",
            expected: a.cols(),
            got: b.cols(),
        });
    }
    Ok(())
}
