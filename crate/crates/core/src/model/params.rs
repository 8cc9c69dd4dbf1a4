use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::MlpSpec;
use crate::numkit::fmath::sqrt;
use crate::numkit::{Matrix, Rng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in x out`, so a batch maps as `X W + b`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InAdapter {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// Parameter groups that can be frozen independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Backbone,
    Classifier,
    BnAffine,
    BnStats,
    InAdapter,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Backbone => "backbone",
            Group::Classifier => "classifier",
            Group::BnAffine => "bn_affine",
            Group::BnStats => "bn_stats",
            Group::InAdapter => "in_adapter",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
    Scale,
    Shift,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Weight => "weight",
            Role::Bias => "bias",
            Role::Gamma => "gamma",
            Role::Beta => "beta",
            Role::RunningMean => "running_mean",
            Role::RunningVar => "running_var",
            Role::Scale => "scale",
            Role::Shift => "shift",
        }
    }
}

/// Identifies one parameter tensor. `layer` is the hidden-layer index, the
/// number of hidden layers for the classifier, and 0 for the adapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId {
    pub group: Group,
    pub layer: usize,
    pub role: Role,
}

impl TensorId {
    /// Only linear weights receive weight decay.
    pub fn decays(&self) -> bool {
        self.role == Role::Weight
    }
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.group {
            Group::InAdapter => write!(f, "in_adapter.{}", self.role.as_str()),
            Group::Classifier => write!(f, "classifier.{}", self.role.as_str()),
            Group::Backbone => write!(f, "hidden.{}.{}", self.layer, self.role.as_str()),
            Group::BnAffine | Group::BnStats => write!(f, "bn.{}.{}", self.layer, self.role.as_str()),
        }
    }
}

/// All learnable and statistical parameters of an MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    spec: MlpSpec,
    pub hidden: Vec<Linear>,
    pub bn: Vec<BatchNorm>,
    pub classifier: Linear,
    pub in_adapter: Option<InAdapter>,
}

impl ModelParams {
    /// Parameters of the right shapes: zero weights, BN at identity (gamma 1,
    /// beta 0, running mean 0, running var 1), adapter at identity.
    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let w = &spec.layer_widths;
        let linear = |i: usize, o: usize| Linear {
            weight: Matrix::zeros(i, o),
            bias: vec![0.0; o],
        };
        let hidden = (0..spec.num_hidden()).map(|l| linear(w[l], w[l + 1])).collect();
        let bn = if spec.use_batchnorm {
            (1..=spec.num_hidden())
                .map(|l| BatchNorm {
                    gamma: vec![1.0; w[l]],
                    beta: vec![0.0; w[l]],
                    running_mean: vec![0.0; w[l]],
                    running_var: vec![1.0; w[l]],
                })
                .collect()
        } else {
            Vec::new()
        };
        let in_adapter = spec.use_in_adapter.then(|| InAdapter {
            scale: vec![1.0; w[0]],
            shift: vec![0.0; w[0]],
        });
        Ok(Self {
            spec: spec.clone(),
            hidden,
            bn,
            classifier: linear(spec.feature_dim(), spec.num_classes()),
            in_adapter,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Every tensor in canonical order: adapter, then per hidden layer its
    /// linear weight/bias and BN gamma/beta/running stats, then the classifier.
    pub fn tensors(&self) -> Vec<(TensorId, &[f64])> {
        let mut out: Vec<(TensorId, &[f64])> = Vec::new();
        let id = |group, layer, role| TensorId { group, layer, role };
        if let Some(a) = &self.in_adapter {
            out.push((id(Group::InAdapter, 0, Role::Scale), &a.scale));
            out.push((id(Group::InAdapter, 0, Role::Shift), &a.shift));
        }
        for (l, lin) in self.hidden.iter().enumerate() {
            out.push((id(Group::Backbone, l, Role::Weight), lin.weight.as_slice()));
            out.push((id(Group::Backbone, l, Role::Bias), &lin.bias));
            if let Some(bn) = self.bn.get(l) {
                out.push((id(Group::BnAffine, l, Role::Gamma), &bn.gamma));
                out.push((id(Group::BnAffine, l, Role::Beta), &bn.beta));
                out.push((id(Group::BnStats, l, Role::RunningMean), &bn.running_mean));
                out.push((id(Group::BnStats, l, Role::RunningVar), &bn.running_var));
            }
        }
        let c = self.hidden.len();
        out.push((id(Group::Classifier, c, Role::Weight), self.classifier.weight.as_slice()));
        out.push((id(Group::Classifier, c, Role::Bias), &self.classifier.bias));
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(TensorId, &mut [f64])> {
        let mut out: Vec<(TensorId, &mut [f64])> = Vec::new();
        let id = |group, layer, role| TensorId { group, layer, role };
        if let Some(a) = &mut self.in_adapter {
            out.push((id(Group::InAdapter, 0, Role::Scale), &mut a.scale));
            out.push((id(Group::InAdapter, 0, Role::Shift), &mut a.shift));
        }
        let c = self.hidden.len();
        let mut bn_iter = self.bn.iter_mut();
        for (l, lin) in self.hidden.iter_mut().enumerate() {
            out.push((id(Group::Backbone, l, Role::Weight), lin.weight.as_mut_slice()));
            out.push((id(Group::Backbone, l, Role::Bias), &mut lin.bias));
            if let Some(bn) = bn_iter.next() {
                out.push((id(Group::BnAffine, l, Role::Gamma), &mut bn.gamma));
                out.push((id(Group::BnAffine, l, Role::Beta), &mut bn.beta));
                out.push((id(Group::BnStats, l, Role::RunningMean), &mut bn.running_mean));
                out.push((id(Group::BnStats, l, Role::RunningVar), &mut bn.running_var));
            }
        }
        out.push((id(Group::Classifier, c, Role::Weight), self.classifier.weight.as_mut_slice()));
        out.push((id(Group::Classifier, c, Role::Bias), &mut self.classifier.bias));
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Concatenation of [`tensors`](Self::tensors).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for (_, t) in self.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn from_flat(spec: &MlpSpec, values: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        let n = p.num_values();
        if values.len() != n {
            return Err(Error::shape("flat parameter count", n, values.len()));
        }
        let mut off = 0;
        for (_, t) in p.tensors_mut() {
            t.copy_from_slice(&values[off..off + t.len()]);
            off += t.len();
        }
        p.check_finite()?;
        Ok(p)
    }

    pub fn check_finite(&self) -> Result<()> {
        for (id, t) in self.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(alloc::format!("non-finite value in {id}")));
            }
            if id.role == Role::RunningVar && t.iter().any(|&v| v < 0.0) {
                return Err(Error::invalid(alloc::format!("negative running variance in {id}")));
            }
        }
        Ok(())
    }

    pub fn bitwise_eq_group(&self, other: &ModelParams, group: Group) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .filter(|((id, _), _)| id.group == group)
            .all(|((_, a), (_, b))| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

/// He-normal weights `N(0, 2 / fan_in)`, zero biases, identity BN and adapter.
pub fn init_model(spec: &MlpSpec, rng: &mut Rng) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(spec)?;
    let layers = p.hidden.iter_mut().chain(core::iter::once(&mut p.classifier));
    for lin in layers {
        let std = sqrt(2.0 / lin.weight.rows() as f64);
        for w in lin.weight.as_mut_slice() {
            *w = std * rng.normal();
        }
    }
    Ok(p)
}

/// Which groups a training run may change; `true` means trainable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FreezeMask {
    pub backbone: bool,
    pub classifier: bool,
    pub bn_affine: bool,
    pub bn_stats: bool,
    pub in_adapter: bool,
}

impl FreezeMask {
    pub const ALL: FreezeMask = FreezeMask {
        backbone: true,
        classifier: true,
        bn_affine: true,
        bn_stats: true,
        in_adapter: true,
    };

    pub const NONE: FreezeMask = FreezeMask {
        backbone: false,
        classifier: false,
        bn_affine: false,
        bn_stats: false,
        in_adapter: false,
    };

    pub fn only(groups: &[Group]) -> Self {
        let mut m = Self::NONE;
        for &g in groups {
            m.set(g, true);
        }
        m
    }

    pub fn with(mut self, group: Group, trainable: bool) -> Self {
        self.set(group, trainable);
        self
    }

    pub fn set(&mut self, group: Group, trainable: bool) {
        match group {
            Group::Backbone => self.backbone = trainable,
            Group::Classifier => self.classifier = trainable,
            Group::BnAffine => self.bn_affine = trainable,
            Group::BnStats => self.bn_stats = trainable,
            Group::InAdapter => self.in_adapter = trainable,
        }
    }

    pub fn trainable(&self, group: Group) -> bool {
        match group {
            Group::Backbone => self.backbone,
            Group::Classifier => self.classifier,
            Group::BnAffine => self.bn_affine,
            Group::BnStats => self.bn_stats,
            Group::InAdapter => self.in_adapter,
        }
    }

    /// A training protocol must be able to change something.
    pub fn validate(&self) -> Result<()> {
        if *self == Self::NONE {
            return Err(Error::invalid("freeze mask leaves nothing trainable"));
        }
        Ok(())
    }
}

/// Gradients of the mean loss, shaped like [`ModelParams`]. Running-stat
/// tensors are always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub(crate) ModelParams);

impl Gradients {
    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        let mut p = ModelParams::zeros(spec)?;
        for (_, t) in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(Self(p))
    }

    pub fn as_params(&self) -> &ModelParams {
        &self.0
    }

    pub fn tensors(&self) -> Vec<(TensorId, &[f64])> {
        self.0.tensors()
    }

    pub fn group_is_zero(&self, group: Group) -> bool {
        self.tensors()
            .iter()
            .filter(|(id, _)| id.group == group)
            .all(|(_, t)| t.iter().all(|&v| v == 0.0))
    }
}

/// Restricts logit columns to the seen classes, keeping their order.
pub fn chopped_logits(logits: &Matrix, seen_mask: &[bool]) -> Result<Matrix> {
    if seen_mask.len() != logits.cols() {
        return Err(Error::shape("seen mask length", logits.cols(), seen_mask.len()));
    }
    let keep = crate::data::mask_indices(seen_mask, true);
    if keep.is_empty() {
        return Err(Error::invalid("seen mask selects no classes"));
    }
    Ok(logits.select_cols(&keep))
}

/// Elementwise `a * first + b * second` over every tensor, running stats
/// included; running variances are floored at zero.
pub fn params_axpy(a: f64, first: &ModelParams, b: f64, second: &ModelParams) -> Result<ModelParams> {
    if first.spec != second.spec {
        return Err(Error::SpecMismatch);
    }
    let mut out = first.clone();
    for ((id, dst), (_, src)) in out.tensors_mut().into_iter().zip(second.tensors()) {
        for (d, s) in dst.iter_mut().zip(src) {
            // Zero coefficients drop their term so endpoints reproduce an
            // operand bitwise.
            *d = if b == 0.0 {
                a * *d
            } else if a == 0.0 {
                b * s
            } else {
                a * *d + b * s
            };
            if id.role == Role::RunningVar && *d < 0.0 {
                *d = 0.0;
            }
        }
    }
    Ok(out)
}
