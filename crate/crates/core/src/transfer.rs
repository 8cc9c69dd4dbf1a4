//! Source pre-training, the target-adaptation protocols, and post-hoc
//! source/target ensembles.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{Dataset, TargetView};
use crate::eval::{evaluate, EvalReport};
use crate::losses::LossSpec;
use crate::model::{
    init_model, params_axpy, predict_logits, recompute_bn_stats, FreezeMask, Group, MlpSpec, ModelParams,
};
use crate::numkit::{softmax_rows, Matrix, Rng};
use crate::optim::{
    train_lolsgd, train_sgd, LolConfig, NoObserver, Objective, SgdConfig, SwaCadence, SwaConfig, SwaObserver,
    TrainObserver,
};
use crate::{Error, Result};

/// Every supported adaptation method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProtocolKind {
    SourceOnly,
    NaiveFt,
    FrozenFt,
    LpFt,
    BnAffineOnly,
    BnStatsOnly,
    InAdapterOnly,
    SgdDistill,
    SgdRank,
    Lolsgd,
    LolsgdDistill,
    LolsgdRank,
    LolsgdDistillRank,
    Swa,
    SwadLite,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 15] = [
        ProtocolKind::SourceOnly,
        ProtocolKind::NaiveFt,
        ProtocolKind::FrozenFt,
        ProtocolKind::LpFt,
        ProtocolKind::BnAffineOnly,
        ProtocolKind::BnStatsOnly,
        ProtocolKind::InAdapterOnly,
        ProtocolKind::SgdDistill,
        ProtocolKind::SgdRank,
        ProtocolKind::Lolsgd,
        ProtocolKind::LolsgdDistill,
        ProtocolKind::LolsgdRank,
        ProtocolKind::LolsgdDistillRank,
        ProtocolKind::Swa,
        ProtocolKind::SwadLite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::SourceOnly => "source_only",
            ProtocolKind::NaiveFt => "naive_ft",
            ProtocolKind::FrozenFt => "frozen_ft",
            ProtocolKind::LpFt => "lp_ft",
            ProtocolKind::BnAffineOnly => "bn_affine_only",
            ProtocolKind::BnStatsOnly => "bn_stats_only",
            ProtocolKind::InAdapterOnly => "in_adapter_only",
            ProtocolKind::SgdDistill => "sgd_distill",
            ProtocolKind::SgdRank => "sgd_rank",
            ProtocolKind::Lolsgd => "lolsgd",
            ProtocolKind::LolsgdDistill => "lolsgd_distill",
            ProtocolKind::LolsgdRank => "lolsgd_rank",
            ProtocolKind::LolsgdDistillRank => "lolsgd_distill_rank",
            ProtocolKind::Swa => "swa",
            ProtocolKind::SwadLite => "swad_lite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(alloc::format!("unknown protocol {s:?}")))
    }

    pub fn uses_lolsgd(self) -> bool {
        matches!(
            self,
            ProtocolKind::Lolsgd
                | ProtocolKind::LolsgdDistill
                | ProtocolKind::LolsgdRank
                | ProtocolKind::LolsgdDistillRank
        )
    }

    pub fn uses_distill(self) -> bool {
        matches!(
            self,
            ProtocolKind::SgdDistill | ProtocolKind::LolsgdDistill | ProtocolKind::LolsgdDistillRank
        )
    }

    pub fn uses_rank(self) -> bool {
        matches!(
            self,
            ProtocolKind::SgdRank | ProtocolKind::LolsgdRank | ProtocolKind::LolsgdDistillRank
        )
    }

    pub fn uses_swa(self) -> bool {
        matches!(self, ProtocolKind::Swa | ProtocolKind::SwadLite)
    }

    /// Groups gradient steps may change. `lp_ft` reports its second phase.
    pub fn freeze_mask(self) -> FreezeMask {
        match self {
            ProtocolKind::NaiveFt | ProtocolKind::LpFt => FreezeMask::ALL,
            ProtocolKind::BnAffineOnly => FreezeMask::only(&[Group::BnAffine, Group::BnStats]),
            ProtocolKind::InAdapterOnly => FreezeMask::only(&[Group::InAdapter]),
            ProtocolKind::SourceOnly | ProtocolKind::BnStatsOnly => FreezeMask::NONE,
            _ => FreezeMask::ALL.with(Group::Classifier, false),
        }
    }
}

/// A fully configured adaptation method.
#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    pub kind: ProtocolKind,
    pub loss: LossSpec,
    pub sgd: SgdConfig,
    pub lol: Option<LolConfig>,
    pub swa: Option<SwaConfig>,
}

impl Protocol {
    /// A protocol with cross-entropy loss and no LOLSGD/SWA settings.
    pub fn new(kind: ProtocolKind, sgd: SgdConfig) -> Self {
        Self {
            kind,
            loss: LossSpec::CE_ONLY,
            sgd,
            lol: None,
            swa: None,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.as_str()
    }

    /// Rejects settings that do not fit the kind or the model.
    pub fn validate(&self, spec: &MlpSpec) -> Result<()> {
        let name = self.name();
        let fail = |why: &str| Err(Error::invalid(alloc::format!("{name}: {why}")));
        self.sgd.validate()?;
        self.loss.validate()?;
        let k = self.kind;
        if k.uses_distill() != (self.loss.lambda_distill > 0.0) {
            return fail(if k.uses_distill() {
                "lambda_distill must be positive"
            } else {
                "lambda_distill must be zero"
            });
        }
        if k.uses_rank() != (self.loss.lambda_rank > 0.0) {
            return fail(if k.uses_rank() {
                "lambda_rank must be positive"
            } else {
                "lambda_rank must be zero"
            });
        }
        match (k.uses_lolsgd(), &self.lol) {
            (true, None) => return fail("missing lolsgd settings"),
            (true, Some(lol)) => lol.validate()?,
            (false, Some(_)) => return fail("lolsgd settings given to a non-lolsgd protocol"),
            (false, None) => {}
        }
        match (k.uses_swa(), &self.swa) {
            (true, None) => return fail("missing swa settings"),
            (true, Some(swa)) => {
                swa.validate(self.sgd.epochs)?;
                let want = if k == ProtocolKind::Swa {
                    SwaCadence::PerEpoch
                } else {
                    SwaCadence::PerIteration
                };
                if swa.cadence != want {
                    return fail("swa cadence does not match the protocol");
                }
            }
            (false, Some(_)) => return fail("swa settings given to a non-averaging protocol"),
            (false, None) => {}
        }
        let needs_bn = matches!(k, ProtocolKind::BnAffineOnly | ProtocolKind::BnStatsOnly);
        if needs_bn && !spec.use_batchnorm {
            return fail("model has no batch-norm layers");
        }
        if k == ProtocolKind::InAdapterOnly && !spec.use_in_adapter {
            return fail("model has no input adapter");
        }
        Ok(())
    }
}

/// Trains a model on the source data from a fresh initialization with all
/// groups trainable and plain cross-entropy. The seen mask argument of the
/// objective is irrelevant here, so every class counts as seen.
pub fn pretrain_source(source_train: &Dataset, spec: &MlpSpec, sgd: &SgdConfig, rng: &Rng) -> Result<ModelParams> {
    spec.validate()?;
    if source_train.classes_present().len() != spec.num_classes() {
        return Err(Error::invalid("source training data must cover every class"));
    }
    let mut params = init_model(spec, &mut rng.derive_str("init"))?;
    let all_seen = alloc::vec![true; spec.num_classes()];
    train_sgd(
        &mut params,
        source_train,
        &Objective::cross_entropy(&all_seen),
        sgd,
        &FreezeMask::ALL,
        &rng.derive_str("source-sgd"),
        &mut NoObserver,
    )?;
    Ok(params)
}

/// Knobs of [`run_protocol`] that are not part of the method itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub scenario_id: String,
    /// Keep the parameters after every epoch (epoch 0 first).
    pub retain_checkpoints: bool,
    pub k_spectrum: usize,
}

/// One adapted model and its per-epoch evaluations.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferRun {
    pub scenario_id: String,
    pub protocol: Protocol,
    pub seed: u64,
    pub source_params: ModelParams,
    pub final_params: ModelParams,
    /// `epochs + 1` reports; entry 0 is the source model.
    pub curve: Vec<EvalReport>,
    pub checkpoints: Option<Vec<ModelParams>>,
}

struct Recorder<'v> {
    view: &'v TargetView<'v>,
    k: usize,
    /// Added to the training loop's epoch number (LP-FT's second phase).
    offset: usize,
    curve: Vec<EvalReport>,
    checkpoints: Option<Vec<ModelParams>>,
}

impl Recorder<'_> {
    fn record(&mut self, params: &ModelParams) -> Result<()> {
        let v = self.view;
        self.curve.push(evaluate(params, v.test, v.seen_mask, v.toxicity, self.k)?);
        if let Some(c) = &mut self.checkpoints {
            c.push(params.clone());
        }
        Ok(())
    }
}

impl TrainObserver for Recorder<'_> {
    fn on_epoch(&mut self, epoch: usize, params: &ModelParams) -> Result<()> {
        debug_assert_eq!(self.curve.len(), epoch + self.offset);
        self.record(params)
    }
}

/// Adapts `source` to the target view with the given protocol, evaluating
/// on the target test set before training and after every epoch.
///
/// Only the target view and the source parameters are visible here; the
/// source training data cannot be reached.
pub fn run_protocol(
    view: &TargetView<'_>,
    source: &ModelParams,
    protocol: &Protocol,
    seed: u64,
    opts: &RunOptions,
) -> Result<TransferRun> {
    protocol.validate(source.spec())?;
    if let Some(t) = view.toxicity {
        t.validate(view.seen_mask)?;
    }
    if let Some(&y) = view.train.labels().iter().find(|&&y| !view.seen_mask.get(y).copied().unwrap_or(false)) {
        return Err(Error::invalid(alloc::format!("target training data holds unseen class {y}")));
    }
    let kind = protocol.kind;
    let epochs = protocol.sgd.epochs;
    let rng = Rng::new(seed, 0).derive_str(kind.as_str());
    let mut rec = Recorder {
        view,
        k: opts.k_spectrum,
        offset: 0,
        curve: Vec::with_capacity(epochs + 1),
        checkpoints: opts.retain_checkpoints.then(Vec::new),
    };
    rec.record(source)?;

    let objective = Objective {
        loss: protocol.loss,
        source: kind.uses_distill().then_some(source),
        seen_mask: view.seen_mask,
    };
    let mut params = source.clone();
    match kind {
        ProtocolKind::SourceOnly | ProtocolKind::BnStatsOnly => {
            if kind == ProtocolKind::BnStatsOnly {
                params = recompute_bn_stats(source, view.train, protocol.sgd.batch_size)?;
            }
            for _ in 0..epochs {
                rec.record(&params)?;
            }
        }
        ProtocolKind::LpFt => {
            let probe = epochs / 2;
            let phases = [
                (probe, FreezeMask::only(&[Group::Classifier]), "probe"),
                (epochs - probe, FreezeMask::ALL, "finetune"),
            ];
            for (n, mask, label) in phases {
                let cfg = SgdConfig { epochs: n, ..protocol.sgd };
                if n > 0 {
                    rec.offset = rec.curve.len() - 1;
                    train_sgd(&mut params, view.train, &objective, &cfg, &mask, &rng.derive_str(label), &mut rec)?;
                }
            }
        }
        _ if kind.uses_lolsgd() => {
            let lol = protocol.lol.as_ref().expect("validated");
            train_lolsgd(
                &mut params,
                view.train,
                &objective,
                &protocol.sgd,
                lol,
                &kind.freeze_mask(),
                &rng,
                &mut rec,
            )?;
        }
        _ if kind.uses_swa() => {
            let swa = protocol.swa.expect("validated");
            let mut obs = SwaObserver::new(swa, &mut rec);
            train_sgd(
                &mut params,
                view.train,
                &objective,
                &protocol.sgd,
                &kind.freeze_mask(),
                &rng,
                &mut obs,
            )?;
            params = obs.acc.finish()?;
        }
        _ => {
            train_sgd(
                &mut params,
                view.train,
                &objective,
                &protocol.sgd,
                &kind.freeze_mask(),
                &rng,
                &mut rec,
            )?;
        }
    }
    debug_assert_eq!(rec.curve.len(), epochs + 1);
    Ok(TransferRun {
        scenario_id: opts.scenario_id.clone(),
        protocol: protocol.clone(),
        seed,
        source_params: source.clone(),
        final_params: params,
        curve: rec.curve,
        checkpoints: rec.checkpoints,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("mixing coefficient must lie in [0, 1]"));
    }
    Ok(())
}

/// Weight-space ensemble `alpha * source + (1 - alpha) * target`, running
/// statistics included.
pub fn wise_merge(source: &ModelParams, target: &ModelParams, alpha: f64) -> Result<ModelParams> {
    check_alpha(alpha)?;
    params_axpy(alpha, source, 1.0 - alpha, target)
}

/// Prediction ensemble `alpha * softmax(source) + (1 - alpha) * softmax(target)`.
pub fn se_predict(source: &ModelParams, target: &ModelParams, x: &Matrix, alpha: f64) -> Result<Matrix> {
    check_alpha(alpha)?;
    if source.spec() != target.spec() {
        return Err(Error::SpecMismatch);
    }
    let ps = softmax_rows(&predict_logits(source, x)?)?;
    let pt = softmax_rows(&predict_logits(target, x)?)?;
    // Endpoints return one operand untouched.
    if alpha == 1.0 {
        return Ok(ps);
    }
    if alpha == 0.0 {
        return Ok(pt);
    }
    let mut out = ps;
    out.scale(alpha);
    out.axpy(1.0 - alpha, &pt);
    Ok(out)
}
