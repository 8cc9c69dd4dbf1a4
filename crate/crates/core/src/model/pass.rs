use alloc::vec;
use alloc::vec::Vec;

use super::{Activation, FreezeMask, Gradients, ModelParams};
use crate::data::Dataset;
use crate::numkit::fmath::{sqrt, tanh};
use crate::numkit::Matrix;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm normalizes with the batch's own statistics.
    Train,
    /// Batch-norm normalizes with running statistics; rows are independent.
    Eval,
}

#[derive(Clone, Debug)]
pub struct BnTrace {
    /// `(x - mean) * inv_std`, before the affine.
    pub normalized: Matrix,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub input: Matrix,
    pub linear_out: Matrix,
    pub bn: Option<BnTrace>,
    /// Post-activation.
    pub output: Matrix,
}

/// Everything backward needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub mode: Mode,
    /// Standardized input before the adapter affine, when the adapter is on.
    pub in_normalized: Option<Matrix>,
    pub layers: Vec<LayerTrace>,
    /// Penultimate features (last hidden activation), `N x h_L`.
    pub features: Matrix,
    pub logits: Matrix,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.logits.rows()
    }
}

fn linear(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut out = x.matmul(w);
    out.add_row_vector(b);
    out
}

fn activate(x: &Matrix, act: Activation) -> Matrix {
    match act {
        // max(0, -0.0) style edge cases all map to +0.
        Activation::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::Tanh => x.map(tanh),
    }
}

fn standardize_rows(x: &Matrix, eps: f64) -> Matrix {
    let d = x.cols() as f64;
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / sqrt(var + eps);
        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    out
}

/// Column means and biased variances.
fn column_moments(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mean = x.column_means();
    let mut var = vec![0.0; x.cols()];
    for r in x.row_iter() {
        for ((v, xi), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (xi - m) * (xi - m);
        }
    }
    let n = x.rows() as f64;
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Runs the network on the `N x d` batch `x`.
///
/// Train mode only *reads* the running statistics; call
/// [`update_running_stats`] afterwards to fold the batch statistics in.
pub fn forward(params: &ModelParams, x: &Matrix, mode: Mode) -> Result<ForwardTrace> {
    let spec = params.spec();
    if x.rows() == 0 {
        return Err(Error::Empty("input batch"));
    }
    if x.cols() != spec.input_dim() {
        return Err(Error::shape("input columns", spec.input_dim(), x.cols()));
    }
    let (in_normalized, mut h) = match &params.in_adapter {
        Some(a) => {
            let xn = standardize_rows(x, spec.in_eps);
            let mut out = xn.clone();
            for i in 0..out.rows() {
                for ((v, s), t) in out.row_mut(i).iter_mut().zip(&a.scale).zip(&a.shift) {
                    *v = *v * s + t;
                }
            }
            (Some(xn), out)
        }
        None => (None, x.clone()),
    };
    let mut layers = Vec::with_capacity(params.hidden.len());
    for (l, lin) in params.hidden.iter().enumerate() {
        let linear_out = linear(&h, &lin.weight, &lin.bias);
        let (pre_act, bn) = match params.bn.get(l) {
            Some(bn) => {
                let (mean, var) = match mode {
                    Mode::Train => column_moments(&linear_out),
                    Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / sqrt(v + spec.bn_eps)).collect();
                let mut normalized = linear_out.clone();
                for i in 0..normalized.rows() {
                    for ((v, m), s) in normalized.row_mut(i).iter_mut().zip(&mean).zip(&inv_std) {
                        *v = (*v - m) * s;
                    }
                }
                let mut y = normalized.clone();
                for i in 0..y.rows() {
                    for ((v, g), b) in y.row_mut(i).iter_mut().zip(&bn.gamma).zip(&bn.beta) {
                        *v = *v * g + b;
                    }
                }
                (
                    y,
                    Some(BnTrace {
                        normalized,
                        mean,
                        var,
                        inv_std,
                    }),
                )
            }
            None => (linear_out.clone(), None),
        };
        let output = activate(&pre_act, spec.activation);
        layers.push(LayerTrace {
            input: h,
            linear_out,
            bn,
            output: output.clone(),
        });
        h = output;
    }
    let logits = linear(&h, &params.classifier.weight, &params.classifier.bias);
    Ok(ForwardTrace {
        mode,
        in_normalized,
        layers,
        features: h,
        logits,
    })
}

/// Eval-mode logits.
pub fn predict_logits(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    forward(params, x, Mode::Eval).map(|t| t.logits)
}

/// Blends a train-mode trace's batch statistics into the running statistics
/// with the model's `bn_momentum`.
pub fn update_running_stats(params: &mut ModelParams, trace: &ForwardTrace) -> Result<()> {
    if trace.mode != Mode::Train {
        return Err(Error::invalid("running statistics need a train-mode trace"));
    }
    let m = params.spec().bn_momentum;
    for (bn, layer) in params.bn.iter_mut().zip(&trace.layers) {
        let t = layer.bn.as_ref().ok_or(Error::invalid("trace lacks batch-norm statistics"))?;
        for (r, b) in bn.running_mean.iter_mut().zip(&t.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in bn.running_var.iter_mut().zip(&t.var) {
            *r = ((1.0 - m) * *r + m * b).max(0.0);
        }
    }
    Ok(())
}

fn check_trace(params: &ModelParams, trace: &ForwardTrace) -> Result<()> {
    let spec = params.spec();
    if trace.mode != Mode::Train {
        return Err(Error::invalid("backward needs a train-mode trace"));
    }
    if trace.layers.len() != params.hidden.len() {
        return Err(Error::shape("trace hidden layers", params.hidden.len(), trace.layers.len()));
    }
    for (l, (layer, lin)) in trace.layers.iter().zip(&params.hidden).enumerate() {
        if layer.input.cols() != lin.weight.rows() || layer.output.cols() != lin.weight.cols() {
            return Err(Error::shape("trace layer width", lin.weight.cols(), layer.output.cols()));
        }
        if layer.bn.is_some() != params.bn.get(l).is_some() {
            return Err(Error::invalid("trace and params disagree on batch-norm"));
        }
    }
    if trace.logits.cols() != spec.num_classes() {
        return Err(Error::shape("trace logits", spec.num_classes(), trace.logits.cols()));
    }
    if trace.in_normalized.is_some() != params.in_adapter.is_some() {
        return Err(Error::invalid("trace and params disagree on the input adapter"));
    }
    Ok(())
}

/// Backpropagates loss gradients through a train-mode trace.
///
/// `grad_logits` is `dL/dlogits` of the batch loss (already carrying its
/// `1/N`), and `grad_features` optionally adds a direct gradient on the
/// penultimate features. Groups frozen in `mask` get exact zeros.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_logits: &Matrix,
    grad_features: Option<&Matrix>,
    mask: &FreezeMask,
) -> Result<Gradients> {
    check_trace(params, trace)?;
    let n = trace.batch_size();
    if grad_logits.shape() != trace.logits.shape() {
        return Err(Error::shape("grad_logits rows", n, grad_logits.rows()));
    }
    let spec = params.spec();
    let mut grads = Gradients::zeros(spec)?;
    let g = &mut grads.0;

    if mask.classifier {
        g.classifier.weight = trace.features.t_matmul(grad_logits);
        g.classifier.bias = grad_logits.column_sums();
    }
    let mut upstream = grad_logits.matmul_t(&params.classifier.weight);
    if let Some(gf) = grad_features {
        if gf.shape() != trace.features.shape() {
            return Err(Error::shape("grad_features columns", trace.features.cols(), gf.cols()));
        }
        upstream.axpy(1.0, gf);
    }

    let need_input_grad = |l: usize| {
        // Anything below layer `l` that still wants a gradient?
        let adapter = mask.in_adapter && params.in_adapter.is_some();
        adapter || (l > 0 && (mask.backbone || (mask.bn_affine && !params.bn.is_empty())))
    };

    for l in (0..params.hidden.len()).rev() {
        let layer = &trace.layers[l];
        // Through the activation.
        let mut d = upstream;
        match spec.activation {
            Activation::Relu => {
                for (dv, &o) in d.as_mut_slice().iter_mut().zip(layer.output.as_slice()) {
                    if o <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (dv, &o) in d.as_mut_slice().iter_mut().zip(layer.output.as_slice()) {
                    *dv *= 1.0 - o * o;
                }
            }
        }
        // Through batch-norm.
        if let (Some(bn), Some(t)) = (params.bn.get(l), &layer.bn) {
            if mask.bn_affine {
                let gb = &mut g.bn[l];
                for i in 0..n {
                    for ((j, &dv), &xh) in d.row(i).iter().enumerate().zip(t.normalized.row(i)) {
                        gb.gamma[j] += dv * xh;
                        gb.beta[j] += dv;
                    }
                }
            }
            let width = d.cols();
            let mut sum_dxh = vec![0.0; width];
            let mut sum_dxh_xh = vec![0.0; width];
            for i in 0..n {
                for j in 0..width {
                    let dxh = d.get(i, j) * bn.gamma[j];
                    sum_dxh[j] += dxh;
                    sum_dxh_xh[j] += dxh * t.normalized.get(i, j);
                }
            }
            let nf = n as f64;
            for i in 0..n {
                for j in 0..width {
                    let dxh = d.get(i, j) * bn.gamma[j];
                    let xh = t.normalized.get(i, j);
                    let v = t.inv_std[j] / nf * (nf * dxh - sum_dxh[j] - xh * sum_dxh_xh[j]);
                    d.set(i, j, v);
                }
            }
        }
        // Through the linear map.
        if mask.backbone {
            g.hidden[l].weight = layer.input.t_matmul(&d);
            g.hidden[l].bias = d.column_sums();
        }
        upstream = if need_input_grad(l) {
            d.matmul_t(&params.hidden[l].weight)
        } else {
            Matrix::zeros(0, 0)
        };
        if l > 0 && !need_input_grad(l) {
            // Nothing below needs a gradient.
            break;
        }
    }

    if let (Some(a), Some(xn)) = (&mut g.in_adapter, &trace.in_normalized) {
        if mask.in_adapter && upstream.rows() == n {
            for i in 0..n {
                for ((j, &dv), &x) in upstream.row(i).iter().enumerate().zip(xn.row(i)) {
                    a.scale[j] += dv * x;
                    a.shift[j] += dv;
                }
            }
        }
    }
    Ok(grads)
}

/// Replaces every BN layer's running statistics with exact statistics of
/// `dataset`, layer by layer (each layer sees the earlier layers' refreshed
/// statistics). Everything else is copied bitwise.
pub fn recompute_bn_stats(params: &ModelParams, dataset: &Dataset, batch_size: usize) -> Result<ModelParams> {
    if params.bn.is_empty() {
        return Err(Error::invalid("model has no batch-norm layers"));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let batch_size = batch_size.max(1);
    let mut out = params.clone();
    let all: Vec<usize> = (0..dataset.len()).collect();
    for l in 0..out.bn.len() {
        let width = out.hidden[l].weight.cols();
        // Chan et al. pairwise merge of (count, mean, M2).
        let mut count = 0.0;
        let mut mean = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for chunk in all.chunks(batch_size) {
            let x = dataset.features().select_rows(chunk);
            let trace = forward(&out, &x, Mode::Eval)?;
            let (bm, bv) = column_moments(&trace.layers[l].linear_out);
            let nb = chunk.len() as f64;
            let total = count + nb;
            for j in 0..width {
                let delta = bm[j] - mean[j];
                mean[j] += delta * nb / total;
                m2[j] += bv[j] * nb + delta * delta * count * nb / total;
            }
            count = total;
        }
        let bn = &mut out.bn[l];
        bn.running_mean = mean;
        bn.running_var = m2.into_iter().map(|v| (v / count).max(0.0)).collect();
    }
    Ok(out)
}
