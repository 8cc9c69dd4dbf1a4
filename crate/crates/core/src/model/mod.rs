//! Dense classifier `f(x) = g(h(x))`: a stack of hidden layers `h` (each
//! linear, optional batch-norm, activation) feeding a linear classifier `g`,
//! with an optional per-sample standardizing adapter at the input.

mod params;
mod pass;

pub use params::{
    chopped_logits, init_model, params_axpy, BatchNorm, FreezeMask, Gradients, Group, InAdapter, Linear,
    ModelParams, Role, TensorId,
};
pub use pass::{
    backward, forward, predict_logits, recompute_bn_stats, update_running_stats, BnTrace, ForwardTrace, LayerTrace,
    Mode,
};

use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid(alloc::format!("unknown activation {other:?}"))),
        }
    }
}

/// Architecture of the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    /// `[input, hidden_1, ..., hidden_L, classes]`.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    /// Batch-norm after every hidden linear layer, before the activation.
    pub use_batchnorm: bool,
    /// Per-sample standardization plus learnable scale/shift at the input.
    pub use_in_adapter: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub in_eps: f64,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Self {
        Self {
            layer_widths,
            activation,
            use_batchnorm: false,
            use_in_adapter: false,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            in_eps: 1e-5,
        }
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        self.use_batchnorm = on;
        self
    }

    pub fn with_in_adapter(mut self, on: bool) -> Self {
        self.use_in_adapter = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::invalid("an MLP needs input, at least one hidden layer, and output widths"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::invalid("layer widths must be at least 1"));
        }
        if !(self.bn_eps > 0.0 && self.in_eps > 0.0) {
            return Err(Error::invalid("normalization epsilons must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("bn_momentum must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    pub fn num_hidden(&self) -> usize {
        self.layer_widths.len() - 2
    }

    /// Width of the penultimate features.
    pub fn feature_dim(&self) -> usize {
        self.layer_widths[self.layer_widths.len() - 2]
    }
}
