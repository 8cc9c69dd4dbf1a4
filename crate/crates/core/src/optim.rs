//! Minibatch SGD with momentum, leave-out local SGD, and tail weight
//! averaging.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::losses::{compose, cross_entropy, rank_reg, selective_distill, LossBreakdown, LossSpec};
use crate::model::{
    backward, forward, predict_logits, update_running_stats, FreezeMask, Gradients, Group, Mode,
    ModelParams, Role,
};
use crate::numkit::fmath::ceil;
use crate::numkit::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid("lr must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be finite and nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }

    /// Minibatches in one pass over `n` samples.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Per-tensor velocity buffers, lazily zero-initialized.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentumState {
    buffers: Vec<Vec<f64>>,
}

impl MomentumState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.buffers.clear();
    }
}

/// One momentum-SGD update: `v <- mu v + g + wd p` (decay on linear weights
/// only), then `p <- p - lr v`. Frozen groups and running statistics are not
/// touched.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut MomentumState,
    cfg: &SgdConfig,
    mask: &FreezeMask,
) -> Result<()> {
    if params.spec() != grads.as_params().spec() {
        return Err(Error::SpecMismatch);
    }
    let grad_tensors = grads.tensors();
    if state.buffers.is_empty() {
        state.buffers = grad_tensors.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
    }
    for (((id, p), (_, g)), v) in params.tensors_mut().into_iter().zip(grad_tensors).zip(&mut state.buffers) {
        if id.group == Group::BnStats || !mask.trainable(id.group) {
            continue;
        }
        let decay = if id.decays() { cfg.weight_decay } else { 0.0 };
        for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            let mut step = gi;
            if decay != 0.0 {
                step += decay * *pi;
            }
            if cfg.momentum != 0.0 {
                step += cfg.momentum * *vi;
            }
            *vi = step;
            *pi -= cfg.lr * step;
        }
    }
    Ok(())
}

/// What a training step minimizes.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    pub loss: LossSpec,
    /// Frozen source model supplying distillation targets.
    pub source: Option<&'a ModelParams>,
    pub seen_mask: &'a [bool],
}

impl<'a> Objective<'a> {
    /// Plain cross-entropy.
    pub fn cross_entropy(seen_mask: &'a [bool]) -> Self {
        Self {
            loss: LossSpec::CE_ONLY,
            source: None,
            seen_mask,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.loss.lambda_distill > 0.0 && self.source.is_none() {
            return Err(Error::invalid("distillation needs the source model"));
        }
        Ok(())
    }
}

/// Forward, loss, backward, SGD update, and (when `bn_stats` is trainable)
/// running-statistics update on one minibatch.
pub fn train_step(
    params: &mut ModelParams,
    data: &Dataset,
    batch: &[usize],
    objective: &Objective<'_>,
    cfg: &SgdConfig,
    mask: &FreezeMask,
    state: &mut MomentumState,
) -> Result<LossBreakdown> {
    let x = data.features().select_rows(batch);
    let y: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
    let trace = forward(params, &x, Mode::Train)?;
    let ce = cross_entropy(&trace.logits, &y)?;
    let distill = match (objective.source, objective.loss.lambda_distill != 0.0) {
        (Some(src), true) => {
            let s = predict_logits(src, &x)?;
            Some(selective_distill(&s, &trace.logits, objective.seen_mask)?)
        }
        _ => None,
    };
    // A single-row batch has zero covariance, so its rank term is zero.
    let rank = if objective.loss.lambda_rank != 0.0 && batch.len() >= 2 {
        Some(rank_reg(&trace.features)?)
    } else {
        None
    };
    let out = compose(&ce, distill.as_ref(), rank.as_ref(), &objective.loss)?;
    let grads = backward(params, &trace, &out.grad_logits, out.grad_features.as_ref(), mask)?;
    sgd_step(params, &grads, state, cfg, mask)?;
    if mask.bn_stats && !params.bn.is_empty() {
        update_running_stats(params, &trace)?;
    }
    Ok(out.breakdown)
}

/// Hooks into a training loop. `epoch` is 1-based.
pub trait TrainObserver {
    fn on_step(&mut self, _params: &ModelParams) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _epoch: usize, _params: &ModelParams) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

fn check_training_inputs(params: &ModelParams, data: &Dataset, cfg: &SgdConfig, mask: &FreezeMask) -> Result<()> {
    cfg.validate()?;
    mask.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if data.dim() != params.spec().input_dim() || data.num_classes() != params.spec().num_classes() {
        return Err(Error::invalid("dataset does not match the model"));
    }
    Ok(())
}

/// `cfg.epochs` passes of reshuffled minibatches; the shuffle for epoch `e`
/// comes from `rng.derive(e)`. Returns the mean per-sample total loss of
/// each epoch.
pub fn train_sgd(
    params: &mut ModelParams,
    data: &Dataset,
    objective: &Objective<'_>,
    cfg: &SgdConfig,
    mask: &FreezeMask,
    rng: &Rng,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<f64>> {
    check_training_inputs(params, data, cfg, mask)?;
    objective.validate()?;
    let mut state = MomentumState::new();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        rng.derive(epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = train_step(params, data, batch, objective, cfg, mask, &mut state)?;
            total += b.total * batch.len() as f64;
            observer.on_step(params)?;
        }
        curve.push(total / data.len() as f64);
        observer.on_epoch(epoch, params)?;
    }
    Ok(curve)
}

/// Length of each local run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LocalBudget {
    /// `ceil(f * N_m / batch)` minibatches, `N_m` the retained sample count.
    EpochFraction(f64),
    Steps(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LolConfig {
    /// Leave-out subsets per round.
    pub m: usize,
    /// Classes dropped from each subset.
    pub leave_k: usize,
    pub local_budget: LocalBudget,
    pub outer_step: f64,
}

impl LolConfig {
    /// `M` subsets with `1/M` epoch each and a full outer step.
    pub fn new(m: usize, leave_k: usize) -> Self {
        Self {
            m,
            leave_k,
            local_budget: LocalBudget::EpochFraction(1.0 / m.max(1) as f64),
            outer_step: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("LOLSGD needs at least one subset"));
        }
        if !(self.outer_step > 0.0 && self.outer_step <= 1.0) {
            return Err(Error::invalid("outer_step must lie in (0, 1]"));
        }
        match self.local_budget {
            LocalBudget::EpochFraction(f) if !(f.is_finite() && f > 0.0) => {
                Err(Error::invalid("local budget fraction must be positive"))
            }
            LocalBudget::Steps(0) => Err(Error::invalid("local budget must be at least one step")),
            _ => Ok(()),
        }
    }

    fn local_steps(&self, retained: usize, batch_size: usize) -> usize {
        match self.local_budget {
            LocalBudget::EpochFraction(f) => (ceil(f * retained as f64 / batch_size as f64) as usize).max(1),
            LocalBudget::Steps(n) => n,
        }
    }
}

/// Bookkeeping from one [`lolsgd_round`].
#[derive(Clone, Debug, PartialEq)]
pub struct RoundStats {
    /// Minibatches processed across all local runs.
    pub minibatches: usize,
    /// Sum over minibatches of the per-sample total loss times batch size.
    pub loss_sum: f64,
    pub samples: usize,
    /// Classes dropped by each local run, ascending `m`.
    pub dropped: Vec<Vec<usize>>,
}

/// One leave-out local SGD round.
///
/// Each of the `M` local runs starts from the same snapshot, drops
/// `leave_k` distinct classes, and runs momentum SGD (fresh buffers) on
/// minibatches drawn from the retained samples. Minibatches are sampled
/// without replacement inside a minibatch and independently across
/// minibatches. The displacements `theta - theta_m` are summed in ascending
/// `m`, averaged, and applied with `outer_step`; running statistics move the
/// same way.
#[allow(clippy::too_many_arguments)]
pub fn lolsgd_round(
    params: &mut ModelParams,
    data: &Dataset,
    objective: &Objective<'_>,
    cfg: &SgdConfig,
    lol: &LolConfig,
    mask: &FreezeMask,
    rng: &Rng,
    round: u64,
) -> Result<RoundStats> {
    round_with_cap(params, data, objective, cfg, lol, mask, rng, round, usize::MAX)
}

/// [`lolsgd_round`] with each local run limited to `cap` minibatches.
#[allow(clippy::too_many_arguments)]
fn round_with_cap(
    params: &mut ModelParams,
    data: &Dataset,
    objective: &Objective<'_>,
    cfg: &SgdConfig,
    lol: &LolConfig,
    mask: &FreezeMask,
    rng: &Rng,
    round: u64,
    cap: usize,
) -> Result<RoundStats> {
    check_training_inputs(params, data, cfg, mask)?;
    objective.validate()?;
    lol.validate()?;
    let classes = data.classes_present();
    if lol.leave_k >= classes.len() {
        return Err(Error::invalid(alloc::format!(
            "cannot leave out {} of {} classes",
            lol.leave_k,
            classes.len()
        )));
    }
    let snapshot = params.clone();
    let round_rng = rng.derive(round);
    let mut sum: Option<ModelParams> = None;
    let mut stats = RoundStats {
        minibatches: 0,
        loss_sum: 0.0,
        samples: 0,
        dropped: Vec::with_capacity(lol.m),
    };
    for m in 0..lol.m {
        let mut local_rng = round_rng.derive(m as u64);
        let mut dropped: Vec<usize> = local_rng
            .sample_without_replacement(classes.len(), lol.leave_k)
            .into_iter()
            .map(|i| classes[i])
            .collect();
        dropped.sort_unstable();
        let keep = data.indices_where(|y| !dropped.contains(&y));
        let steps = lol.local_steps(keep.len(), cfg.batch_size).min(cap);
        let take = cfg.batch_size.min(keep.len());
        let mut local = snapshot.clone();
        let mut state = MomentumState::new();
        let mut batch = Vec::with_capacity(take);
        for _ in 0..steps {
            batch.clear();
            batch.extend(local_rng.sample_without_replacement(keep.len(), take).into_iter().map(|i| keep[i]));
            let b = train_step(&mut local, data, &batch, objective, cfg, mask, &mut state)?;
            stats.loss_sum += b.total * take as f64;
            stats.samples += take;
        }
        stats.minibatches += steps;
        stats.dropped.push(dropped);
        let displacement = combine_raw(&snapshot, -1.0, &local);
        sum = Some(match sum {
            None => displacement,
            Some(acc) => combine_raw(&acc, 1.0, &displacement),
        });
    }
    let sum = sum.expect("at least one subset");
    let scale = lol.outer_step / lol.m as f64;
    // theta - scale * sum, with only the running variance floored.
    for ((id, p), (_, g)) in params.tensors_mut().into_iter().zip(sum.tensors()) {
        for (pi, &gi) in p.iter_mut().zip(g) {
            if gi != 0.0 {
                *pi -= scale * gi;
            }
        }
        if id.role == Role::RunningVar {
            p.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    Ok(stats)
}

/// `a + sign * b` elementwise without the running-variance floor, since
/// displacements of the variance may be negative. Both share a spec.
fn combine_raw(a: &ModelParams, sign: f64, b: &ModelParams) -> ModelParams {
    let mut out = a.clone();
    for ((_, d), (_, s)) in out.tensors_mut().into_iter().zip(b.tensors()) {
        for (di, si) in d.iter_mut().zip(s) {
            *di += sign * si;
        }
    }
    out
}

/// Outcome of [`train_lolsgd`].
#[derive(Clone, Debug, PartialEq)]
pub struct LolRun {
    pub rounds: usize,
    pub minibatches: usize,
    /// Mean per-sample total loss of the local steps in each epoch.
    pub epoch_losses: Vec<f64>,
}

/// LOLSGD under the SGD baseline's compute budget: for epoch `e` rounds
/// continue while the running minibatch count is below
/// `e * ceil(N / batch)`. When fewer minibatches remain than a round would
/// use, every local run of that round is cut to `ceil(remaining / M)`
/// steps, so each epoch overshoots the SGD count by less than `M`.
#[allow(clippy::too_many_arguments)]
pub fn train_lolsgd(
    params: &mut ModelParams,
    data: &Dataset,
    objective: &Objective<'_>,
    cfg: &SgdConfig,
    lol: &LolConfig,
    mask: &FreezeMask,
    rng: &Rng,
    observer: &mut dyn TrainObserver,
) -> Result<LolRun> {
    check_training_inputs(params, data, cfg, mask)?;
    lol.validate()?;
    let per_epoch = cfg.steps_per_epoch(data.len());
    let mut run = LolRun {
        rounds: 0,
        minibatches: 0,
        epoch_losses: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 1..=cfg.epochs {
        let (mut loss, mut samples) = (0.0, 0usize);
        while run.minibatches < epoch * per_epoch {
            let remaining = epoch * per_epoch - run.minibatches;
            let cap = remaining.div_ceil(lol.m);
            let s = round_with_cap(params, data, objective, cfg, lol, mask, rng, run.rounds as u64, cap)?;
            run.rounds += 1;
            run.minibatches += s.minibatches;
            loss += s.loss_sum;
            samples += s.samples;
            observer.on_step(params)?;
        }
        run.epoch_losses.push(if samples > 0 { loss / samples as f64 } else { f64::NAN });
        observer.on_epoch(epoch, params)?;
    }
    Ok(run)
}

/// When checkpoints enter the running average.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwaCadence {
    /// End of every epoch (SWA).
    PerEpoch,
    /// After every optimizer step (SWAD-lite, without the loss-aware window).
    PerIteration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwaConfig {
    /// Checkpoints from 1-based epochs strictly after this one are averaged.
    pub start_epoch: usize,
    pub cadence: SwaCadence,
}

impl SwaConfig {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        if self.start_epoch >= epochs {
            return Err(Error::invalid("swa start_epoch must be below the epoch count"));
        }
        Ok(())
    }
}

/// Equal-weight running average of parameter checkpoints.
#[derive(Clone, Debug, Default)]
pub struct SwaAccumulator {
    average: Option<ModelParams>,
    count: usize,
}

impl SwaAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, params: &ModelParams) -> Result<()> {
        self.count += 1;
        let Some(avg) = &mut self.average else {
            self.average = Some(params.clone());
            return Ok(());
        };
        if avg.spec() != params.spec() {
            return Err(Error::SpecMismatch);
        }
        // avg + (p - avg) / n leaves entries that agree with the new
        // checkpoint (frozen groups) bitwise unchanged.
        let w = 1.0 / self.count as f64;
        for ((_, d), (_, s)) in avg.tensors_mut().into_iter().zip(params.tensors()) {
            for (di, &si) in d.iter_mut().zip(s) {
                if si != *di {
                    *di += w * (si - *di);
                }
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn average(&self) -> Option<&ModelParams> {
        self.average.as_ref()
    }

    pub fn finish(self) -> Result<ModelParams> {
        self.average.ok_or(Error::Empty("checkpoint stream"))
    }
}

/// Running average of a checkpoint stream.
pub fn swa_average<'a>(checkpoints: impl IntoIterator<Item = &'a ModelParams>) -> Result<ModelParams> {
    let mut acc = SwaAccumulator::new();
    for p in checkpoints {
        acc.push(p)?;
    }
    acc.finish()
}

/// Wraps another observer and feeds checkpoints to an accumulator at the
/// configured cadence.
pub struct SwaObserver<'o> {
    pub cfg: SwaConfig,
    pub acc: SwaAccumulator,
    epoch: usize,
    inner: &'o mut dyn TrainObserver,
}

impl<'o> SwaObserver<'o> {
    pub fn new(cfg: SwaConfig, inner: &'o mut dyn TrainObserver) -> Self {
        Self {
            cfg,
            acc: SwaAccumulator::new(),
            epoch: 1,
            inner,
        }
    }

    /// The averaged parameters so far, else the live ones.
    fn current<'p>(&'p self, live: &'p ModelParams) -> &'p ModelParams {
        self.acc.average().unwrap_or(live)
    }
}

impl TrainObserver for SwaObserver<'_> {
    fn on_step(&mut self, params: &ModelParams) -> Result<()> {
        if self.cfg.cadence == SwaCadence::PerIteration && self.epoch > self.cfg.start_epoch {
            self.acc.push(params)?;
        }
        Ok(())
    }

    fn on_epoch(&mut self, epoch: usize, params: &ModelParams) -> Result<()> {
        if self.cfg.cadence == SwaCadence::PerEpoch && epoch > self.cfg.start_epoch {
            self.acc.push(params)?;
        }
        self.epoch = epoch + 1;
        let current = self.current(params).clone();
        self.inner.on_epoch(epoch, &current)
    }
}
