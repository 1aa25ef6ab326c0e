//! Dense vectors and matrices, activations, and the differentiation tape.
//!
//! Vectors are plain `[f64]` slices. [`Mat`] is row-major.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Param, ParamStore};
pub use tape::{Gradients, NodeId, Tape};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Norm below which a vector is treated as zero by [`cosine`].
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!("matrix dimensions must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(invalid("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Mat::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`. Panics on a dimension mismatch; use [`apply_linear`] for a checked call.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        self.data.chunks_exact(self.cols).map(|row| dot(row, x)).collect()
    }

    /// Product with the column block `[col_start, col_start + x.len())`.
    pub fn matvec_cols(&self, col_start: usize, x: &[f64]) -> Vec<f64> {
        assert!(col_start + x.len() <= self.cols, "column block out of range");
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(&row[col_start..col_start + x.len()], x))
            .collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }
}

/// A dense affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Mat,
    pub bias: Option<Vec<f64>>,
}

impl LinearLayer {
    pub fn new(weight: Mat, bias: Option<Vec<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weight.rows() {
                return Err(invalid(format!(
                    "bias has {} entries but weight has {} rows",
                    b.len(),
                    weight.rows()
                )));
            }
        }
        Ok(LinearLayer { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

pub fn apply_linear(layer: &LinearLayer, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != layer.in_dim() {
        return Err(invalid(format!(
            "linear layer expects input dim {}, got {}",
            layer.in_dim(),
            x.len()
        )));
    }
    let mut y = layer.weight.matvec(x);
    if let Some(b) = &layer.bias {
        add_assign(&mut y, b);
    }
    Ok(y)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

pub fn axpy(acc: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(invalid("softmax of an empty vector"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| libm::exp(x - max)).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    Ok(out)
}

/// Softmax whose exponentials are scaled by nonnegative gates.
///
/// When every gate is zero the result is uniform.
pub fn weighted_softmax(logits: &[f64], gates: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(invalid("weighted softmax of an empty vector"));
    }
    if logits.len() != gates.len() {
        return Err(invalid(format!(
            "weighted softmax: {} logits but {} gates",
            logits.len(),
            gates.len()
        )));
    }
    if let Some(g) = gates.iter().find(|g| g.is_nan() || **g < 0.0) {
        return Err(invalid(format!("weighted softmax gate must be nonnegative, got {g}")));
    }
    Ok(weighted_softmax_unchecked(logits, gates).0)
}

/// Returns the weights and the stabilized exponentials divided by the normalizer
/// (`e_j / Z`, needed for the gate gradient). The second vector is empty in the
/// all-zero-gate fallback.
pub(crate) fn weighted_softmax_unchecked(logits: &[f64], gates: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = logits.len();
    let max = logits
        .iter()
        .zip(gates)
        .filter(|(_, g)| **g > 0.0)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (vec![1.0 / n as f64; n], Vec::new());
    }
    let exps: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
    let z: f64 = exps.iter().zip(gates).map(|(e, g)| e * g).sum();
    if z.is_nan() || z <= 0.0 {
        return (vec![1.0 / n as f64; n], Vec::new());
    }
    let w = exps.iter().zip(gates).map(|(e, g)| e * g / z).collect();
    let scaled = exps.iter().map(|e| e / z).collect();
    (w, scaled)
}

/// Cosine similarity clamped to `[-1, 1]`; zero when either norm is below [`ZERO_NORM`].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(invalid(format!("cosine of vectors with dims {} and {}", u.len(), v.len())));
    }
    Ok(cosine_unchecked(u, v))
}

pub(crate) fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let nu = norm(u);
    let nv = norm(v);
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// `max(z, 0) - z y + ln(1 + e^{-|z|})`, the cross-entropy of `sigmoid(z)` against `y`.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    relu(z) - z * y + libm::log1p(libm::exp(-libm::fabs(z)))
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
