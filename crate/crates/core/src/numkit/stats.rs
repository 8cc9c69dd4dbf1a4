use alloc::vec::Vec;

use super::fmath::{exp, ln};
use super::Matrix;
use crate::{Error, Result};

/// Floor applied to `q` inside [`kl_div`] before taking the log.
pub const KL_FLOOR: f64 = 1e-12;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyLogits);
    }
    let mut out = Vec::with_capacity(logits.len());
    softmax_into(logits, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(logits.iter().map(|&v| exp(v - max)));
    let total: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= total;
    }
}

/// Row-wise softmax of an `N x C` logit matrix.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    if logits.cols() == 0 {
        return Err(Error::EmptyLogits);
    }
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    let mut buf = Vec::with_capacity(logits.cols());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), &mut buf);
        out.row_mut(i).copy_from_slice(&buf);
    }
    Ok(out)
}

/// `KL(p || q) = sum_i p_i ln(p_i / q_i)` with `0 ln 0 = 0` and `q` floored at [`KL_FLOOR`].
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("kl_div operand length", p.len(), q.len()));
    }
    let total = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (ln(pi) - ln(qi.max(KL_FLOOR))))
        .sum::<f64>();
    // Rounding can leave a tiny negative residue when p == q.
    Ok(total.max(0.0))
}

/// Batch covariance `(1/N) sum_n (z_n - mean)(z_n - mean)^T`.
pub fn covariance(z: &Matrix) -> Result<Matrix> {
    let n = z.rows();
    if n == 0 {
        return Err(Error::Empty("feature batch"));
    }
    let d = z.cols();
    let mean = z.column_means();
    let mut centered = z.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut c = centered.t_matmul(&centered);
    let inv_n = 1.0 / n as f64;
    for i in 0..d {
        for j in i..d {
            // Average both triangles so the result is exactly symmetric.
            let v = 0.5 * (c.get(i, j) + c.get(j, i)) * inv_n;
            c.set(i, j, v);
            c.set(j, i, v);
        }
    }
    Ok(c)
}
