//! Shared fixtures: the reference synthetic scenario and its recipes.
#![allow(dead_code)]

use htlab_core::data::{gen_synthetic_with_oracle, Dataset, HTScenario, PerClassCounts, StyleTransform, SyntheticConfig};
use htlab_core::model::{Activation, MlpSpec};
use htlab_core::optim::{LolConfig, SgdConfig};
use htlab_core::transfer::{Protocol, ProtocolKind};
use htlab_core::Rng;

pub fn reference_config(seed: u64) -> SyntheticConfig {
    let style = StyleTransform::rotation_shift(16, 0.5, 2.0, 0.0, &mut Rng::new(seed, 0).derive_str("style")).unwrap();
    SyntheticConfig {
        num_classes: 10,
        num_seen: 6,
        dim: 16,
        counts: PerClassCounts {
            source: 200,
            target_train: 60,
            target_test: 40,
        },
        cluster_sep: 4.0,
        class_sigma: 1.0,
        style,
        seed,
    }
}

pub fn reference(seed: u64) -> (HTScenario, Dataset) {
    gen_synthetic_with_oracle(&reference_config(seed)).unwrap()
}

pub fn reference_spec() -> MlpSpec {
    MlpSpec::new(vec![16, 64, 64, 10], Activation::Relu)
}

pub fn source_sgd() -> SgdConfig {
    SgdConfig {
        lr: 0.01,
        momentum: 0.9,
        weight_decay: 5e-4,
        batch_size: 32,
        epochs: 30,
    }
}

pub fn target_sgd() -> SgdConfig {
    SgdConfig {
        epochs: 20,
        ..source_sgd()
    }
}

pub fn protocol(kind: ProtocolKind) -> Protocol {
    let mut p = Protocol::new(kind, target_sgd());
    if kind.uses_distill() {
        p.loss.lambda_distill = 1.0;
    }
    if kind.uses_rank() {
        p.loss.lambda_rank = 3e-6;
    }
    if kind.uses_lolsgd() {
        p.lol = Some(LolConfig::new(10, 3));
    }
    p
}
