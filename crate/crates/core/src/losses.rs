//! Cross-entropy, selective distillation over unseen logits, the feature
//! rank regularizer, and their weighted composition.

use alloc::vec::Vec;

use crate::data::mask_indices;
use crate::numkit::fmath::ln;
use crate::numkit::stats::softmax_into;
use crate::numkit::{covariance, kl_div, Matrix};
use crate::{Error, Result};

/// A scalar batch loss and its gradient with respect to the loss input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossParts {
    pub loss: f64,
    pub grad: Matrix,
}

/// Direction in which the rank term enters the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RankSign {
    /// Minimize `rank_reg` as written.
    #[default]
    Penalize,
    /// Maximize it instead.
    Reward,
}

impl RankSign {
    pub fn value(self) -> f64 {
        match self {
            RankSign::Penalize => 1.0,
            RankSign::Reward => -1.0,
        }
    }

    pub fn from_value(v: i64) -> Result<Self> {
        match v {
            1 => Ok(RankSign::Penalize),
            -1 => Ok(RankSign::Reward),
            _ => Err(Error::invalid("rank_sign must be +1 or -1")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossSpec {
    pub lambda_distill: f64,
    pub lambda_rank: f64,
    pub rank_sign: RankSign,
}

impl LossSpec {
    pub const CE_ONLY: LossSpec = LossSpec {
        lambda_distill: 0.0,
        lambda_rank: 0.0,
        rank_sign: RankSign::Penalize,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_distill) || !ok(self.lambda_rank) {
            return Err(Error::invalid("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossBreakdown {
    pub ce: f64,
    pub distill: f64,
    pub rank: f64,
    pub total: f64,
}

/// Mean negative log-likelihood of `labels`; gradient `(softmax - onehot) / N`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<LossParts> {
    let (n, c) = logits.shape();
    if n == 0 {
        return Err(Error::Empty("logit batch"));
    }
    if c == 0 {
        return Err(Error::EmptyLogits);
    }
    if labels.len() != n {
        return Err(Error::shape("label count", n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(alloc::format!("label {bad} out of range for {c} classes")));
    }
    let nf = n as f64;
    let mut grad = Matrix::zeros(n, c);
    let mut loss = 0.0;
    let mut buf = Vec::with_capacity(c);
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        // Log-sum-exp form keeps the loss finite for extreme margins.
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + ln(row.iter().map(|&v| crate::numkit::fmath::exp(v - max)).sum::<f64>());
        loss += lse - row[y];
        softmax_into(row, &mut buf);
        let g = grad.row_mut(i);
        for (gj, pj) in g.iter_mut().zip(&buf) {
            *gj = pj / nf;
        }
        g[y] -= 1.0 / nf;
    }
    Ok(LossParts { loss: loss / nf, grad })
}

/// `KL(softmax(s^U) || softmax(t^U))` averaged over the batch, where `^U`
/// restricts to unseen columns. The gradient is taken with respect to the
/// target logits and is zero in every seen column.
pub fn selective_distill(source_logits: &Matrix, target_logits: &Matrix, seen_mask: &[bool]) -> Result<LossParts> {
    let (n, c) = target_logits.shape();
    if source_logits.shape() != (n, c) {
        return Err(Error::shape("source logit rows", n, source_logits.rows()));
    }
    if seen_mask.len() != c {
        return Err(Error::shape("seen mask length", c, seen_mask.len()));
    }
    if n == 0 {
        return Err(Error::Empty("logit batch"));
    }
    let unseen = mask_indices(seen_mask, false);
    if unseen.is_empty() {
        return Err(Error::NoUnseenClasses);
    }
    let nf = n as f64;
    let s = source_logits.select_cols(&unseen);
    let t = target_logits.select_cols(&unseen);
    let mut grad = Matrix::zeros(n, c);
    let (mut ps, mut pt) = (Vec::new(), Vec::new());
    let mut loss = 0.0;
    for i in 0..n {
        softmax_into(s.row(i), &mut ps);
        softmax_into(t.row(i), &mut pt);
        loss += kl_div(&ps, &pt)?;
        let g = grad.row_mut(i);
        for ((&col, a), b) in unseen.iter().zip(&pt).zip(&ps) {
            g[col] = (a - b) / nf;
        }
    }
    Ok(LossParts { loss: loss / nf, grad })
}

/// `sum_j ((C^T C)_jj)^2` for the `1/N` covariance `C` of the batch features.
pub fn rank_reg(features: &Matrix) -> Result<LossParts> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::invalid("rank regularizer needs at least two samples"));
    }
    let cov = covariance(features)?;
    // s_j = (C^T C)_jj = sum_i C_ij^2
    let mut s = alloc::vec![0.0; d];
    for i in 0..d {
        for (sj, c) in s.iter_mut().zip(cov.row(i)) {
            *sj += c * c;
        }
    }
    let loss = s.iter().map(|v| v * v).sum();
    // dL/dC_ij = 4 s_j C_ij; with C = Zc^T Zc / N, dL/dZ = Zc (G + G^T) / N.
    // Zc's columns sum to zero, so the centering Jacobian drops out.
    let mut g = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            g.set(i, j, 4.0 * s[j] * cov.get(i, j));
        }
    }
    let sym = {
        let mut t = g.transpose();
        t.axpy(1.0, &g);
        t
    };
    let mean = features.column_means();
    let mut centered = features.clone();
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut grad = centered.matmul(&sym);
    grad.scale(1.0 / n as f64);
    Ok(LossParts { loss, grad })
}

/// Weighted total and gradients from [`compose`].
#[derive(Clone, Debug, PartialEq)]
pub struct Composed {
    pub breakdown: LossBreakdown,
    pub grad_logits: Matrix,
    /// Present only when the rank term contributes.
    pub grad_features: Option<Matrix>,
}

/// `ce + λ_d·distill + sign·λ_r·rank`. A term whose weight is zero (or whose
/// parts are absent) is skipped entirely, so it cannot perturb the result.
pub fn compose(
    ce: &LossParts,
    distill: Option<&LossParts>,
    rank: Option<&LossParts>,
    spec: &LossSpec,
) -> Result<Composed> {
    spec.validate()?;
    let mut breakdown = LossBreakdown {
        ce: ce.loss,
        total: ce.loss,
        ..LossBreakdown::default()
    };
    let mut grad_logits = ce.grad.clone();
    if let Some(d) = distill.filter(|_| spec.lambda_distill != 0.0) {
        if d.grad.shape() != grad_logits.shape() {
            return Err(Error::shape("distill gradient columns", grad_logits.cols(), d.grad.cols()));
        }
        breakdown.distill = d.loss;
        breakdown.total += spec.lambda_distill * d.loss;
        grad_logits.axpy(spec.lambda_distill, &d.grad);
    }
    let mut grad_features = None;
    if let Some(r) = rank.filter(|_| spec.lambda_rank != 0.0) {
        if r.grad.rows() != grad_logits.rows() {
            return Err(Error::shape("rank gradient rows", grad_logits.rows(), r.grad.rows()));
        }
        let w = spec.rank_sign.value() * spec.lambda_rank;
        breakdown.rank = r.loss;
        breakdown.total += w * r.loss;
        let mut g = r.grad.clone();
        g.scale(w);
        grad_features = Some(g);
    }
    Ok(Composed {
        breakdown,
        grad_logits,
        grad_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let p = cross_entropy(&Matrix::zeros(3, 4), &[0, 1, 3]).unwrap();
        assert!((p.loss - ln(4.0)).abs() < 1e-15);
    }

    #[test]
    fn ce_decreases_with_margin_toward_zero() {
        let mut prev = f64::INFINITY;
        for margin in [0.0, 1.0, 5.0, 20.0, 200.0] {
            let l = cross_entropy(&m(&[&[margin, 0.0]]), &[0]).unwrap().loss;
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-80);
    }

    #[test]
    fn ce_rejects_bad_labels() {
        assert!(cross_entropy(&Matrix::zeros(1, 2), &[2]).is_err());
        assert!(cross_entropy(&Matrix::zeros(2, 2), &[0]).is_err());
    }

    #[test]
    fn distill_hand_value() {
        let three = ln(3.0);
        let s = m(&[&[9.0, 0.0, three]]);
        let t = m(&[&[-4.0, 0.0, 0.0]]);
        let p = selective_distill(&s, &t, &[true, false, false]).unwrap();
        let want = 0.25 * ln(0.5) + 0.75 * ln(1.5);
        assert!((p.loss - want).abs() < 1e-12, "{} vs {want}", p.loss);
        assert!((p.loss - 0.130_812_035_941_137_7).abs() < 1e-12);
        assert_eq!(p.grad.get(0, 0), 0.0);
        assert!((p.grad.get(0, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn distill_identity_is_zero() {
        let s = m(&[&[1.0, 2.0, 3.0], &[0.5, -1.0, 4.0]]);
        let p = selective_distill(&s, &s, &[false, true, false]).unwrap();
        assert_eq!(p.loss, 0.0);
        assert!(p.grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn distill_needs_unseen_classes() {
        let s = Matrix::zeros(1, 2);
        assert_eq!(selective_distill(&s, &s, &[true, true]), Err(Error::NoUnseenClasses));
    }

    #[test]
    fn rank_of_constant_batch_is_zero() {
        let p = rank_reg(&Matrix::filled(5, 3, 2.5)).unwrap();
        assert_eq!(p.loss, 0.0);
        assert!(rank_reg(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn compose_with_zero_weights_is_ce() {
        let logits = m(&[&[1.0, 0.0, -1.0], &[0.0, 2.0, 0.0]]);
        let ce = cross_entropy(&logits, &[0, 1]).unwrap();
        let d = selective_distill(&logits, &logits.map(|v| v * 0.5), &[true, false, false]).unwrap();
        let r = rank_reg(&m(&[&[1.0, 2.0], &[3.0, -1.0]])).unwrap();
        let out = compose(&ce, Some(&d), Some(&r), &LossSpec::CE_ONLY).unwrap();
        assert_eq!(out.breakdown.total.to_bits(), ce.loss.to_bits());
        assert_eq!(out.grad_logits, ce.grad);
        assert!(out.grad_features.is_none());
    }

    #[test]
    fn compose_accepts_large_recipe_weights() {
        let spec = LossSpec {
            lambda_distill: 10.0,
            lambda_rank: 100.0,
            rank_sign: RankSign::Penalize,
        };
        assert!(spec.validate().is_ok());
        let bad = LossSpec {
            lambda_rank: -1.0,
            ..spec
        };
        assert!(bad.validate().is_err());
    }
}
