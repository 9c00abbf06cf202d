//! Dense row-major matrices and the few kernels the model needs.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Tensor {
        Tensor {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out += W x` restricted to rows `r0..r0 + out.len()`.
    pub fn matvec_rows_add(&self, r0: usize, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (k, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r0 + k), x);
        }
    }

    /// `out += W x`.
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.rows);
        self.matvec_rows_add(0, x, out);
    }

    /// `out += W[r0.., ..]^T y`.
    pub fn matvec_t_rows_add(&self, r0: usize, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.cols);
        for (k, &yk) in y.iter().enumerate() {
            if yk != 0.0 {
                axpy(yk, self.row(r0 + k), out);
            }
        }
    }

    pub fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        self.matvec_t_rows_add(0, y, out);
    }

    /// `W[r0.., ..] += y x^T`.
    pub fn outer_rows_add(&mut self, r0: usize, y: &[f64], x: &[f64]) {
        for (k, &yk) in y.iter().enumerate() {
            if yk != 0.0 {
                axpy(yk, x, self.row_mut(r0 + k));
            }
        }
    }

    pub fn outer_add(&mut self, y: &[f64], x: &[f64]) {
        self.outer_rows_add(0, y, x);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Log-softmax over the entries where `allowed` is true; others get -inf.
pub fn masked_log_softmax(logits: &[f64], allowed: Option<&[bool]>) -> Vec<f64> {
    let ok = |i: usize| allowed.is_none_or(|m| m[i]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| ok(i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| ok(i))
        .map(|(_, &v)| (v - max).exp())
        .sum();
    let lz = max + z.ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, &v)| if ok(i) { v - lz } else { f64::NEG_INFINITY })
        .collect()
}
