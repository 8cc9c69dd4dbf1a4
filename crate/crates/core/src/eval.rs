//! Accuracy views, false-negative rate, feature spectra, and seed
//! aggregation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{mask_indices, Dataset, ToxicityMap};
use crate::model::{chopped_logits, forward, Mode, ModelParams};
use crate::numkit::{argmax, top_singular_values, Matrix, Spectrum};
use crate::transfer::TransferRun;
use crate::{Error, Result};

/// Singular values at or above this fraction of the largest count toward
/// the effective rank.
pub const EFFECTIVE_RANK_TAU: f64 = 0.01;

/// Default number of reported singular values.
pub const DEFAULT_SPECTRUM_K: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub overall_acc: f64,
    pub seen_acc: f64,
    pub unseen_acc: f64,
    pub seen_chopped_acc: f64,
    pub false_negative_rate: Option<f64>,
    /// Leading singular values of the test-set penultimate features. Empty
    /// for reports computed from ensemble scores.
    pub spectrum: Spectrum,
    /// Computed over the full spectrum, not just the reported prefix.
    pub effective_rank: usize,
    pub n_seen: usize,
    pub n_unseen: usize,
}

impl EvalReport {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            overall: self.overall_acc,
            seen: self.seen_acc,
            unseen: self.unseen_acc,
            seen_chopped: self.seen_chopped_acc,
            fnr: self.false_negative_rate,
            effective_rank: self.effective_rank as f64,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy views from any per-class score matrix (logits or
/// probabilities). The spectrum is left empty.
pub fn evaluate_scores(
    scores: &Matrix,
    labels: &[usize],
    seen_mask: &[bool],
    toxicity: Option<&ToxicityMap>,
) -> Result<EvalReport> {
    let (n, c) = scores.shape();
    if n == 0 {
        return Err(Error::Empty("test set"));
    }
    if labels.len() != n {
        return Err(Error::shape("label count", n, labels.len()));
    }
    if seen_mask.len() != c {
        return Err(Error::shape("seen mask length", c, seen_mask.len()));
    }
    let seen_cols = mask_indices(seen_mask, true);
    let chopped = chopped_logits(scores, seen_mask)?;
    let (mut n_seen, mut n_unseen) = (0, 0);
    let (mut hit_seen, mut hit_unseen, mut hit_chopped) = (0, 0, 0);
    let toxic_sets = toxicity.map(|t| {
        t.validate(seen_mask).map(|_| {
            let mut toxic = alloc::vec![false; c];
            let mut safe = alloc::vec![false; c];
            t.toxic_classes().into_iter().for_each(|k| toxic[k] = true);
            t.non_toxic_classes().into_iter().for_each(|k| safe[k] = true);
            (toxic, safe)
        })
    });
    let toxic_sets = toxic_sets.transpose()?;
    let (mut n_toxic, mut false_neg) = (0, 0);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::invalid(alloc::format!("label {y} out of range")));
        }
        let pred = argmax(scores.row(i));
        if seen_mask[y] {
            n_seen += 1;
            hit_seen += usize::from(pred == y);
            hit_chopped += usize::from(seen_cols[argmax(chopped.row(i))] == y);
        } else {
            n_unseen += 1;
            hit_unseen += usize::from(pred == y);
        }
        if let Some((toxic, safe)) = &toxic_sets {
            if toxic[y] {
                n_toxic += 1;
                false_neg += usize::from(safe[pred]);
            }
        }
    }
    if n_seen == 0 || n_unseen == 0 {
        return Err(Error::invalid("test set needs both seen and unseen samples"));
    }
    let false_negative_rate = match &toxic_sets {
        Some(_) if n_toxic == 0 => return Err(Error::invalid("test set has no toxic samples")),
        Some(_) => Some(ratio(false_neg, n_toxic)),
        None => None,
    };
    Ok(EvalReport {
        overall_acc: ratio(hit_seen + hit_unseen, n),
        seen_acc: ratio(hit_seen, n_seen),
        unseen_acc: ratio(hit_unseen, n_unseen),
        seen_chopped_acc: ratio(hit_chopped, n_seen),
        false_negative_rate,
        spectrum: Spectrum::new(Vec::new())?,
        effective_rank: 0,
        n_seen,
        n_unseen,
    })
}

/// Full singular spectrum of the centered penultimate features of `data`.
pub fn feature_spectrum(params: &ModelParams, data: &Dataset) -> Result<Spectrum> {
    let trace = forward(params, data.features(), Mode::Eval)?;
    let f = &trace.features;
    top_singular_values(f, f.rows().min(f.cols()))
}

/// `min(DEFAULT_SPECTRUM_K, width)` for the given feature width.
pub fn default_k(feature_width: usize) -> usize {
    DEFAULT_SPECTRUM_K.min(feature_width)
}

/// Eval-mode report on `test`: argmax accuracies (ties to the lowest class),
/// chopped seen accuracy, optional false-negative rate, and the top
/// `k_spectrum` singular values of the penultimate features.
pub fn evaluate(
    params: &ModelParams,
    test: &Dataset,
    seen_mask: &[bool],
    toxicity: Option<&ToxicityMap>,
    k_spectrum: usize,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let trace = forward(params, test.features(), Mode::Eval)?;
    let mut report = evaluate_scores(&trace.logits, test.labels(), seen_mask, toxicity)?;
    let f = &trace.features;
    let full = top_singular_values(f, f.rows().min(f.cols()))?;
    report.effective_rank = full.effective_rank(EFFECTIVE_RANK_TAU);
    report.spectrum = full.truncated(k_spectrum);
    Ok(report)
}

/// The scalar metrics of a report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub overall: f64,
    pub seen: f64,
    pub unseen: f64,
    pub seen_chopped: f64,
    pub fnr: Option<f64>,
    pub effective_rank: f64,
}

impl Metrics {
    fn zip_with(&self, other: &Metrics, f: impl Fn(f64, f64) -> f64) -> Metrics {
        Metrics {
            overall: f(self.overall, other.overall),
            seen: f(self.seen, other.seen),
            unseen: f(self.unseen, other.unseen),
            seen_chopped: f(self.seen_chopped, other.seen_chopped),
            fnr: self.fnr.zip(other.fnr).map(|(a, b)| f(a, b)),
            effective_rank: f(self.effective_rank, other.effective_rank),
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Metrics {
        self.zip_with(self, |a, _| f(a))
    }
}

/// One seed's final metrics for a (scenario, protocol) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub scenario_id: String,
    pub protocol: String,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateReport {
    pub scenario_id: String,
    pub protocol: String,
    pub seeds: Vec<u64>,
    pub mean: Metrics,
    /// Population variance.
    pub variance: Metrics,
}

/// Population mean and variance across at least two seeds of one cell.
pub fn aggregate_seeds(results: &[SeedResult]) -> Result<AggregateReport> {
    let first = results.first().ok_or(Error::Empty("seed results"))?;
    if results.len() < 2 {
        return Err(Error::invalid("aggregation needs at least two seeds"));
    }
    if let Some(r) = results
        .iter()
        .find(|r| r.protocol != first.protocol || r.scenario_id != first.scenario_id)
    {
        return Err(Error::invalid(alloc::format!(
            "cannot aggregate {}/{} with {}/{}",
            first.scenario_id,
            first.protocol,
            r.scenario_id,
            r.protocol
        )));
    }
    if results.iter().any(|r| r.metrics.fnr.is_some() != first.metrics.fnr.is_some()) {
        return Err(Error::invalid("false-negative rate present for only some seeds"));
    }
    let k = results.len() as f64;
    let mut sum = first.metrics;
    for r in &results[1..] {
        sum = sum.zip_with(&r.metrics, |a, b| a + b);
    }
    let mean = sum.map(|v| v / k);
    let mut var = mean.map(|_| 0.0);
    for r in results {
        var = var.zip_with(&r.metrics.zip_with(&mean, |a, m| (a - m) * (a - m)), |a, b| a + b);
    }
    Ok(AggregateReport {
        scenario_id: first.scenario_id.clone(),
        protocol: first.protocol.clone(),
        seeds: results.iter().map(|r| r.seed).collect(),
        mean,
        variance: var.map(|v| (v / k).max(0.0)),
    })
}

/// Per-epoch spectra from a run's retained checkpoints, epoch 0 first.
pub fn spectrum_trace(run: &TransferRun, test: &Dataset, k: usize) -> Result<Vec<Spectrum>> {
    let ckpts = run
        .checkpoints
        .as_ref()
        .ok_or(Error::invalid("run did not retain per-epoch checkpoints"))?;
    ckpts
        .iter()
        .map(|p| feature_spectrum(p, test).map(|s| s.truncated(k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores_for(preds: &[usize], c: usize) -> Matrix {
        let mut m = Matrix::zeros(preds.len(), c);
        for (i, &p) in preds.iter().enumerate() {
            m.set(i, p, 1.0);
        }
        m
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 3];
        let tox = ToxicityMap { pairs: alloc::vec![(2, 0), (3, 1)] };
        let r = evaluate_scores(&scores_for(&labels, 4), &labels, &[true, true, false, false], Some(&tox)).unwrap();
        assert_eq!((r.overall_acc, r.seen_acc, r.unseen_acc, r.seen_chopped_acc), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.false_negative_rate, Some(0.0));
    }

    #[test]
    fn constant_seen_prediction_collapses_unseen() {
        let labels = [0, 1, 2, 3, 2];
        let tox = ToxicityMap { pairs: alloc::vec![(2, 0), (3, 1)] };
        let r = evaluate_scores(&scores_for(&[0; 5], 4), &labels, &[true, true, false, false], Some(&tox)).unwrap();
        assert_eq!(r.unseen_acc, 0.0);
        assert_eq!(r.false_negative_rate, Some(1.0));
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let r = evaluate_scores(&Matrix::zeros(2, 2), &[0, 1], &[true, false], None).unwrap();
        assert_eq!((r.seen_acc, r.unseen_acc), (1.0, 0.0));
    }

    #[test]
    fn needs_seen_and_unseen_samples() {
        assert!(evaluate_scores(&Matrix::zeros(2, 2), &[0, 0], &[true, false], None).is_err());
        assert!(evaluate_scores(&Matrix::zeros(0, 2), &[], &[true, false], None).is_err());
    }

    fn result(protocol: &str, seed: u64, overall: f64) -> SeedResult {
        SeedResult {
            scenario_id: "s".into(),
            protocol: protocol.into(),
            seed,
            metrics: Metrics {
                overall,
                seen: overall,
                unseen: overall,
                seen_chopped: overall,
                fnr: None,
                effective_rank: 3.0,
            },
        }
    }

    #[test]
    fn aggregate_two_seeds_by_hand() {
        let a = aggregate_seeds(&[result("p", 1, 0.4), result("p", 2, 0.6)]).unwrap();
        assert!((a.mean.overall - 0.5).abs() < 1e-15);
        assert!((a.variance.overall - 0.01).abs() < 1e-15);
        assert_eq!(a.variance.effective_rank, 0.0);
        assert!(aggregate_seeds(&[result("p", 1, 0.4)]).is_err());
        assert!(aggregate_seeds(&[result("p", 1, 0.4), result("q", 2, 0.4)]).is_err());
    }
}
