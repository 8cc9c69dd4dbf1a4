//! Central finite-difference checks of every analytic gradient.

use htlab_core::losses::{cross_entropy, rank_reg, selective_distill};
use htlab_core::model::{backward, forward, init_model, Activation, FreezeMask, MlpSpec, Mode, ModelParams, Role};
use htlab_core::{Matrix, Rng};

const EPS: f64 = 1e-5;

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central differences of `f` at every entry of `x`.
fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut hi = x.clone();
            hi.set(i, j, x.get(i, j) + EPS);
            let mut lo = x.clone();
            lo.set(i, j, x.get(i, j) - EPS);
            g.set(i, j, (f(&hi) - f(&lo)) / (2.0 * EPS));
        }
    }
    g
}

fn max_rel(a: &Matrix, n: &Matrix) -> f64 {
    a.as_slice().iter().zip(n.as_slice()).map(|(&a, &n)| rel_err(a, n)).fold(0.0, f64::max)
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = Rng::new(1, 0);
    let logits = random_matrix(5, 3, &mut rng);
    let labels = [0, 2, 1, 1, 0];
    let analytic = cross_entropy(&logits, &labels).unwrap().grad;
    let numeric = numeric_grad(&logits, |z| cross_entropy(z, &labels).unwrap().loss);
    assert!(analytic.max_abs_diff(&numeric) < 1e-6);
    assert!(max_rel(&analytic, &numeric) < 1e-4);
}

#[test]
fn selective_distill_gradient() {
    let mut rng = Rng::new(2, 0);
    let src = random_matrix(4, 6, &mut rng);
    let tgt = random_matrix(4, 6, &mut rng);
    let mask = [true, false, true, false, false, true];
    let analytic = selective_distill(&src, &tgt, &mask).unwrap().grad;
    let numeric = numeric_grad(&tgt, |t| selective_distill(&src, t, &mask).unwrap().loss);
    assert!(max_rel(&analytic, &numeric) < 1e-4, "{}", max_rel(&analytic, &numeric));
}

#[test]
fn rank_reg_gradient() {
    let mut rng = Rng::new(3, 0);
    let z = random_matrix(6, 4, &mut rng);
    let analytic = rank_reg(&z).unwrap().grad;
    let numeric = numeric_grad(&z, |z| rank_reg(z).unwrap().loss);
    assert!(max_rel(&analytic, &numeric) < 1e-5, "{}", max_rel(&analytic, &numeric));
}

/// Scalar used to exercise model backward: cross-entropy on the logits plus
/// a fixed linear functional of the penultimate features.
fn model_loss(p: &ModelParams, x: &Matrix, labels: &[usize], feat_w: &Matrix) -> f64 {
    let t = forward(p, x, Mode::Train).unwrap();
    let ce = cross_entropy(&t.logits, labels).unwrap().loss;
    let lin: f64 = t.features.as_slice().iter().zip(feat_w.as_slice()).map(|(a, b)| a * b).sum();
    ce + lin
}

fn check_model(bn: bool, adapter: bool, act: Activation) {
    let spec = MlpSpec::new(vec![5, 6, 7, 3], act).with_batchnorm(bn).with_in_adapter(adapter);
    let mut rng = Rng::new(40 + u64::from(bn) * 2 + u64::from(adapter), 7);
    let mut p = init_model(&spec, &mut rng).unwrap();
    // Move affine and adapter parameters off their identity values.
    for b in &mut p.bn {
        b.gamma.iter_mut().for_each(|g| *g = 1.0 + 0.3 * rng.normal());
        b.beta.iter_mut().for_each(|g| *g = 0.3 * rng.normal());
    }
    if let Some(a) = &mut p.in_adapter {
        a.scale.iter_mut().for_each(|g| *g = 1.0 + 0.3 * rng.normal());
        a.shift.iter_mut().for_each(|g| *g = 0.3 * rng.normal());
    }
    for l in p.hidden.iter_mut().chain([&mut p.classifier]) {
        l.bias.iter_mut().for_each(|b| *b = 0.1 * rng.normal());
    }
    let n = 8;
    let x = random_matrix(n, 5, &mut rng);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let mut feat_w = random_matrix(n, 7, &mut rng);
    feat_w.scale(0.1);

    let t = forward(&p, &x, Mode::Train).unwrap();
    let ce = cross_entropy(&t.logits, &labels).unwrap();
    let grads = backward(&p, &t, &ce.grad, Some(&feat_w), &FreezeMask::ALL).unwrap();

    let mut worst = 0.0f64;
    let flat = p.flatten();
    let ids: Vec<_> = p.tensors().iter().flat_map(|(id, t)| std::iter::repeat_n(*id, t.len())).collect();
    let analytic = grads.as_params().flatten();
    for k in 0..flat.len() {
        if matches!(ids[k].role, Role::RunningMean | Role::RunningVar) {
            continue;
        }
        let at = |v: f64| {
            let mut f = flat.clone();
            f[k] = v;
            let q = ModelParams::from_flat(&spec, &f).unwrap();
            model_loss(&q, &x, &labels, &feat_w)
        };
        let num = (at(flat[k] + EPS) - at(flat[k] - EPS)) / (2.0 * EPS);
        let e = rel_err(analytic[k], num);
        assert!(e < 1e-4, "{} entry {k}: analytic {} numeric {num}", ids[k], analytic[k]);
        worst = worst.max(e);
    }
    assert!(worst < 1e-4);
}

#[test]
fn model_gradients_plain_relu() {
    check_model(false, false, Activation::Relu);
}

#[test]
fn model_gradients_plain_tanh() {
    check_model(false, false, Activation::Tanh);
}

#[test]
fn model_gradients_bn_relu() {
    check_model(true, false, Activation::Relu);
}

#[test]
fn model_gradients_bn_tanh() {
    check_model(true, false, Activation::Tanh);
}

#[test]
fn model_gradients_adapter_relu() {
    check_model(false, true, Activation::Relu);
}

#[test]
fn model_gradients_adapter_tanh() {
    check_model(false, true, Activation::Tanh);
}

#[test]
fn model_gradients_bn_adapter_relu() {
    check_model(true, true, Activation::Relu);
}

#[test]
fn model_gradients_bn_adapter_tanh() {
    check_model(true, true, Activation::Tanh);
}

#[test]
fn duplicated_batch_leaves_gradients_unchanged() {
    let spec = MlpSpec::new(vec![4, 5, 3], Activation::Tanh).with_batchnorm(true);
    let mut rng = Rng::new(8, 8);
    let p = init_model(&spec, &mut rng).unwrap();
    let x = random_matrix(6, 4, &mut rng);
    let labels = [0, 1, 2, 0, 1, 2];
    let grads = |x: &Matrix, y: &[usize]| {
        let t = forward(&p, x, Mode::Train).unwrap();
        let ce = cross_entropy(&t.logits, y).unwrap();
        backward(&p, &t, &ce.grad, None, &FreezeMask::ALL).unwrap().as_params().flatten()
    };
    let once = grads(&x, &labels);
    let twice = grads(&Matrix::vstack(&[&x, &x]).unwrap(), &[labels, labels].concat());
    for (a, b) in once.iter().zip(&twice) {
        assert!((a - b).abs() < 1e-12);
    }
}
