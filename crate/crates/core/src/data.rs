//! Holistic-transfer scenarios: datasets, style shifts, seen/unseen splits.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::numkit::fmath::{cos, round, sin, sqrt};
use crate::numkit::{determinant, Matrix, Rng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

/// Labelled feature rows. Features are stored as one `N x d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape("dataset labels", features.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if !features.is_finite() {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn from_samples(samples: &[Sample], dim: usize, num_classes: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(samples.len() * dim);
        for s in samples {
            if s.x.len() != dim {
                return Err(Error::shape("sample dimension", dim, s.x.len()));
            }
            data.extend_from_slice(&s.x);
        }
        let features = Matrix::from_vec(samples.len(), dim, data)?;
        Self::new(features, samples.iter().map(|s| s.y).collect(), num_classes)
    }

    pub fn empty(dim: usize, num_classes: usize) -> Self {
        Self {
            features: Matrix::zeros(0, dim),
            labels: Vec::new(),
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            x: self.features.row(i).to_vec(),
            y: self.labels[i],
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Indices of samples whose label satisfies `keep`.
    pub fn indices_where(&self, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| keep(self.labels[i])).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Sorted distinct labels.
    pub fn classes_present(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.labels.iter().copied().collect();
        set.into_iter().collect()
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(Error::Empty("dataset list"))?;
        let mut labels = Vec::new();
        for p in parts {
            if p.num_classes != first.num_classes {
                return Err(Error::shape("dataset classes", first.num_classes, p.num_classes));
            }
            labels.extend_from_slice(&p.labels);
        }
        let mats: Vec<&Matrix> = parts.iter().map(|p| &p.features).collect();
        Ok(Dataset {
            features: Matrix::vstack(&mats)?,
            labels,
            num_classes: first.num_classes,
        })
    }
}

/// Class-independent input shift `x -> A x + b + noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleTransform {
    matrix: Matrix,
    shift: Vec<f64>,
    noise_sigma: f64,
}

impl StyleTransform {
    pub fn new(matrix: Matrix, shift: Vec<f64>, noise_sigma: f64) -> Result<Self> {
        let d = matrix.rows();
        if matrix.cols() != d {
            return Err(Error::shape("style matrix columns", d, matrix.cols()));
        }
        if shift.len() != d {
            return Err(Error::shape("style shift length", d, shift.len()));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and nonnegative"));
        }
        if determinant(&matrix)?.abs() <= 1e-9 {
            return Err(Error::invalid("style matrix is singular"));
        }
        Ok(Self {
            matrix,
            shift,
            noise_sigma,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: Matrix::identity(dim),
            shift: vec![0.0; dim],
            noise_sigma: 0.0,
        }
    }

    /// `Q R(angle) Q^T` plus a shift of length `shift_norm`, where `Q` is a
    /// random orthogonal basis and `R` rotates each consecutive coordinate
    /// pair by `angle` radians. The shift direction is uniform on the sphere.
    pub fn rotation_shift(
        dim: usize,
        angle: f64,
        shift_norm: f64,
        noise_sigma: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("rotation needs dim >= 2"));
        }
        let q = random_orthogonal(dim, rng);
        let mut r = Matrix::identity(dim);
        let (c, s) = (cos(angle), sin(angle));
        for p in 0..dim / 2 {
            let (i, j) = (2 * p, 2 * p + 1);
            r.set(i, i, c);
            r.set(i, j, -s);
            r.set(j, i, s);
            r.set(j, j, c);
        }
        let matrix = q.matmul(&r).matmul_t(&q);
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = sqrt(dir.iter().map(|v| v * v).sum::<f64>());
        for v in &mut dir {
            *v *= shift_norm / norm;
        }
        Self::new(matrix, dir, noise_sigma)
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn apply(&self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                let ax: f64 = self.matrix.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                let noise = if self.noise_sigma > 0.0 {
                    self.noise_sigma * rng.normal()
                } else {
                    0.0
                };
                ax + self.shift[i] + noise
            })
            .collect()
    }
}

/// Gram-Schmidt QR of a Gaussian matrix, returning `Q`.
pub fn random_orthogonal(dim: usize, rng: &mut Rng) -> Matrix {
    loop {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
        let mut ok = true;
        for _ in 0..dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            // Two passes of modified Gram-Schmidt keep Q orthogonal to ~1e-15.
            for _ in 0..2 {
                for u in &cols {
                    let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                    for (vi, ui) in v.iter_mut().zip(u) {
                        *vi -= dot * ui;
                    }
                }
            }
            let norm = sqrt(v.iter().map(|a| a * a).sum::<f64>());
            if norm < 1e-8 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
        if ok {
            let mut q = Matrix::zeros(dim, dim);
            for (j, c) in cols.iter().enumerate() {
                for (i, &v) in c.iter().enumerate() {
                    q.set(i, j, v);
                }
            }
            return q;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PerClassCounts {
    pub source: usize,
    /// Drawn for seen classes only.
    pub target_train: usize,
    pub target_test: usize,
}

/// Source train, seen-only target train, full target test.
#[derive(Clone, Debug, PartialEq)]
pub struct HTScenario {
    pub source_train: Dataset,
    pub target_train: Dataset,
    pub target_test: Dataset,
    pub seen_mask: Vec<bool>,
    pub seed: u64,
}

/// The target-side view handed to adaptation protocols. It carries no
/// reference to the source training data.
#[derive(Clone, Copy, Debug)]
pub struct TargetView<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub seen_mask: &'a [bool],
    pub toxicity: Option<&'a ToxicityMap>,
}

impl HTScenario {
    pub fn num_classes(&self) -> usize {
        self.seen_mask.len()
    }

    pub fn dim(&self) -> usize {
        self.source_train.dim()
    }

    pub fn seen_classes(&self) -> Vec<usize> {
        mask_indices(&self.seen_mask, true)
    }

    pub fn unseen_classes(&self) -> Vec<usize> {
        mask_indices(&self.seen_mask, false)
    }

    pub fn target_view<'a>(&'a self, toxicity: Option<&'a ToxicityMap>) -> TargetView<'a> {
        TargetView {
            train: &self.target_train,
            test: &self.target_test,
            seen_mask: &self.seen_mask,
            toxicity,
        }
    }

    /// Checks every structural invariant of a scenario.
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        for (name, ds) in [
            ("source_train", &self.source_train),
            ("target_train", &self.target_train),
            ("target_test", &self.target_test),
        ] {
            if ds.num_classes() != c {
                return Err(Error::invalid(format!(
                    "{name} has {} classes, mask has {c}",
                    ds.num_classes()
                )));
            }
            if ds.dim() != self.dim() {
                return Err(Error::shape("scenario dimension", self.dim(), ds.dim()));
            }
        }
        if !self.seen_mask.iter().any(|&s| s) {
            return Err(Error::invalid("no seen classes"));
        }
        if self.seen_mask.iter().all(|&s| s) {
            return Err(Error::NoUnseenClasses);
        }
        if let Some(&y) = self.target_train.labels().iter().find(|&&y| !self.seen_mask[y]) {
            return Err(Error::invalid(format!("target_train holds unseen class {y}")));
        }
        for (name, ds) in [("target_test", &self.target_test), ("source_train", &self.source_train)] {
            if let Some(missing) = ds.class_counts().iter().position(|&n| n == 0) {
                return Err(Error::invalid(format!("{name} lacks class {missing}")));
            }
        }
        Ok(())
    }
}

pub(crate) fn mask_indices(mask: &[bool], value: bool) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m == value)
        .map(|(i, _)| i)
        .collect()
}

/// Arguments of [`gen_synthetic_scenario`].
#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub num_seen: usize,
    pub dim: usize,
    pub counts: PerClassCounts,
    /// Minimum distance between any two class means.
    pub cluster_sep: f64,
    /// Within-class standard deviation.
    pub class_sigma: f64,
    pub style: StyleTransform,
    pub seed: u64,
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.num_seen == 0 {
            return Err(Error::invalid("num_seen must be at least 1"));
        }
        if self.num_seen >= self.num_classes {
            return Err(Error::NoUnseenClasses);
        }
        if self.dim < 2 {
            return Err(Error::invalid("dim must be at least 2"));
        }
        let c = self.counts;
        if c.source == 0 || c.target_train == 0 || c.target_test == 0 {
            return Err(Error::invalid("per-class counts must be at least 1"));
        }
        if self.style.dim() != self.dim {
            return Err(Error::shape("style dimension", self.dim, self.style.dim()));
        }
        if !(self.cluster_sep > 0.0 && self.class_sigma >= 0.0) {
            return Err(Error::invalid("cluster_sep must be positive, class_sigma nonnegative"));
        }
        Ok(())
    }
}

/// Gaussian directions rescaled so the closest pair sits exactly `sep` apart.
fn class_means(num_classes: usize, dim: usize, sep: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dim).map(|_| rng.normal()).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for i in 0..num_classes {
        for j in i + 1..num_classes {
            min_dist = min_dist.min(dist(&means[i], &means[j]));
        }
    }
    if min_dist.is_finite() && min_dist > 0.0 {
        let scale = sep / min_dist;
        for m in &mut means {
            m.iter_mut().for_each(|v| *v *= scale);
        }
    }
    means
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

struct ClassDraws<'a> {
    dim: usize,
    num_classes: usize,
    sigma: f64,
    style: &'a StyleTransform,
    root: Rng,
}

impl ClassDraws<'_> {
    fn draw(&self, split: &str, means: &[Vec<f64>], classes: &[usize], per_class: usize, styled: bool) -> Result<Dataset> {
        let split_rng = self.root.derive_str(split);
        let mut samples = Vec::with_capacity(classes.len() * per_class);
        for &c in classes {
            let mut rng = split_rng.derive(c as u64);
            for _ in 0..per_class {
                let x: Vec<f64> = means[c].iter().map(|m| m + self.sigma * rng.normal()).collect();
                let x = if styled { self.style.apply(&x, &mut rng) } else { x };
                samples.push(Sample { x, y: c });
            }
        }
        Dataset::from_samples(&samples, self.dim, self.num_classes)
    }
}

/// Builds a synthetic scenario together with the full-class target training
/// set an oracle with access to every class would use.
///
/// The seen-class part of the oracle set is exactly `target_train`.
pub fn gen_synthetic_with_oracle(cfg: &SyntheticConfig) -> Result<(HTScenario, Dataset)> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed, 0);
    let means = class_means(cfg.num_classes, cfg.dim, cfg.cluster_sep, &mut root.derive_str("means"));
    let seen = root
        .derive_str("seen")
        .sample_without_replacement(cfg.num_classes, cfg.num_seen);
    let mut seen_mask = vec![false; cfg.num_classes];
    for &c in &seen {
        seen_mask[c] = true;
    }
    let draws = ClassDraws {
        dim: cfg.dim,
        num_classes: cfg.num_classes,
        sigma: cfg.class_sigma,
        style: &cfg.style,
        root,
    };
    let all: Vec<usize> = (0..cfg.num_classes).collect();
    let seen_sorted = mask_indices(&seen_mask, true);
    let source_train = draws.draw("source", &means, &all, cfg.counts.source, false)?;
    let oracle_train = draws.draw("target-train", &means, &all, cfg.counts.target_train, true)?;
    let target_train = oracle_train.subset(&oracle_train.indices_where(|y| seen_mask[y]));
    let target_test = draws.draw("target-test", &means, &all, cfg.counts.target_test, true)?;
    debug_assert_eq!(target_train.classes_present(), seen_sorted);
    let scenario = HTScenario {
        source_train,
        target_train,
        target_test,
        seen_mask,
        seed: cfg.seed,
    };
    scenario.validate()?;
    Ok((scenario, oracle_train))
}

/// Synthetic scenario: Gaussian class clusters in the source domain, the
/// same clusters pushed through `cfg.style` in the target domain, and a
/// uniformly drawn set of `num_seen` seen classes.
pub fn gen_synthetic_scenario(cfg: &SyntheticConfig) -> Result<HTScenario> {
    gen_synthetic_with_oracle(cfg).map(|(s, _)| s)
}

/// Draws held-out source-domain data from the same class means as `cfg`.
pub fn gen_source_holdout(cfg: &SyntheticConfig, per_class: usize) -> Result<Dataset> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed, 0);
    let means = class_means(cfg.num_classes, cfg.dim, cfg.cluster_sep, &mut root.derive_str("means"));
    let draws = ClassDraws {
        dim: cfg.dim,
        num_classes: cfg.num_classes,
        sigma: cfg.class_sigma,
        style: &cfg.style,
        root,
    };
    let all: Vec<usize> = (0..cfg.num_classes).collect();
    draws.draw("source-holdout", &means, &all, per_class, false)
}

/// Result of [`make_ht_split`]: the target datasets plus bookkeeping.
#[derive(Clone, Debug)]
pub struct HtSplit {
    pub target_train: Dataset,
    pub target_test: Dataset,
    pub seen_mask: Vec<bool>,
    /// Input row indices in `target_train` order.
    pub train_ids: Vec<usize>,
    /// Input row indices in `target_test` order.
    pub test_ids: Vec<usize>,
    /// Training-portion rows of unseen classes, dropped from `target_train`.
    pub discarded_ids: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Per-class stratified split of a labelled pool into seen-only training
/// data and all-class test data.
pub fn make_ht_split(full: &Dataset, seen_classes: &[usize], train_ratio: f64, seed: u64) -> Result<HtSplit> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::invalid("train_ratio must lie in (0, 1)"));
    }
    if seen_classes.is_empty() {
        return Err(Error::invalid("seen_classes is empty"));
    }
    let c = full.num_classes();
    let mut seen_mask = vec![false; c];
    for &s in seen_classes {
        if s >= c {
            return Err(Error::invalid(format!("seen class {s} out of range")));
        }
        seen_mask[s] = true;
    }
    let present = full.classes_present();
    if present.iter().all(|&p| seen_mask[p]) {
        return Err(Error::NoUnseenClasses);
    }
    let root = Rng::new(seed, 0).derive_str("ht-split");
    let (mut train_ids, mut test_ids, mut discarded_ids) = (Vec::new(), Vec::new(), Vec::new());
    let mut warnings = Vec::new();
    for &class in &present {
        let mut idx = full.indices_where(|y| y == class);
        let n = idx.len();
        if n < 2 {
            warnings.push(format!("class {class} has {n} sample(s); all assigned to test"));
            test_ids.extend(idx);
            continue;
        }
        root.derive(class as u64).shuffle(&mut idx);
        let n_train = (round(train_ratio * n as f64) as usize).clamp(1, n - 1);
        let (tr, te) = idx.split_at(n_train);
        if seen_mask[class] {
            train_ids.extend_from_slice(tr);
        } else {
            discarded_ids.extend_from_slice(tr);
        }
        test_ids.extend_from_slice(te);
    }
    Ok(HtSplit {
        target_train: full.subset(&train_ids),
        target_test: full.subset(&test_ids),
        seen_mask,
        train_ids,
        test_ids,
        discarded_ids,
        warnings,
    })
}

/// `(toxic, non_toxic)` class pairs of the confusable-pairs scenario.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToxicityMap {
    pub pairs: Vec<(usize, usize)>,
}

impl ToxicityMap {
    pub fn toxic_classes(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn non_toxic_classes(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    pub fn validate(&self, seen_mask: &[bool]) -> Result<()> {
        let mut used = BTreeSet::new();
        for &(t, n) in &self.pairs {
            for c in [t, n] {
                if c >= seen_mask.len() || !used.insert(c) {
                    return Err(Error::invalid(format!("toxicity class {c} repeated or out of range")));
                }
            }
        }
        let non_toxic: BTreeSet<usize> = self.non_toxic_classes().into_iter().collect();
        let seen: BTreeSet<usize> = mask_indices(seen_mask, true).into_iter().collect();
        if non_toxic != seen {
            return Err(Error::invalid("non-toxic classes must equal the seen classes"));
        }
        Ok(())
    }
}

/// Arguments of [`gen_paired_toxicity_scenario`].
#[derive(Clone, Debug)]
pub struct PairedConfig {
    pub num_pairs: usize,
    pub dim: usize,
    pub counts: PerClassCounts,
    /// 0 places a pair as far apart as unrelated classes; values toward 1
    /// pull the toxic mean onto its non-toxic partner.
    pub pair_overlap: f64,
    pub cluster_sep: f64,
    pub class_sigma: f64,
    pub style: StyleTransform,
    pub seed: u64,
}

/// Confusable-pairs scenario: class `2i` is toxic, `2i + 1` its non-toxic
/// look-alike, and only the non-toxic classes are seen.
pub fn gen_paired_toxicity_scenario(cfg: &PairedConfig) -> Result<(HTScenario, ToxicityMap)> {
    if cfg.num_pairs == 0 {
        return Err(Error::invalid("num_pairs must be at least 1"));
    }
    if !(0.0..1.0).contains(&cfg.pair_overlap) {
        return Err(Error::invalid("pair_overlap must lie in [0, 1)"));
    }
    let num_classes = 2 * cfg.num_pairs;
    let base = SyntheticConfig {
        num_classes,
        num_seen: cfg.num_pairs,
        dim: cfg.dim,
        counts: cfg.counts,
        cluster_sep: cfg.cluster_sep,
        class_sigma: cfg.class_sigma,
        style: cfg.style.clone(),
        seed: cfg.seed,
    };
    base.validate()?;
    let root = Rng::new(cfg.seed, 0);
    let mut means = class_means(num_classes, cfg.dim, cfg.cluster_sep, &mut root.derive_str("means"));
    let pairs: Vec<(usize, usize)> = (0..cfg.num_pairs).map(|i| (2 * i, 2 * i + 1)).collect();
    for &(toxic, safe) in &pairs {
        let pulled: Vec<f64> = means[safe]
            .iter()
            .zip(&means[toxic])
            .map(|(s, t)| s + (1.0 - cfg.pair_overlap) * (t - s))
            .collect();
        means[toxic] = pulled;
    }
    let mut seen_mask = vec![false; num_classes];
    for &(_, safe) in &pairs {
        seen_mask[safe] = true;
    }
    let draws = ClassDraws {
        dim: cfg.dim,
        num_classes,
        sigma: cfg.class_sigma,
        style: &cfg.style,
        root,
    };
    let all: Vec<usize> = (0..num_classes).collect();
    let safe: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let scenario = HTScenario {
        source_train: draws.draw("source", &means, &all, cfg.counts.source, false)?,
        target_train: draws.draw("target-train", &means, &safe, cfg.counts.target_train, true)?,
        target_test: draws.draw("target-test", &means, &all, cfg.counts.target_test, true)?,
        seen_mask,
        seed: cfg.seed,
    };
    scenario.validate()?;
    let map = ToxicityMap { pairs };
    map.validate(&scenario.seen_mask)?;
    Ok((scenario, map))
}

#[cfg(test)]
mod tests {
    use alloc::string::ToString;
    use super::*;

    fn cfg(num_classes: usize, num_seen: usize, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            num_classes,
            num_seen,
            dim: 4,
            counts: PerClassCounts {
                source: 5,
                target_train: 3,
                target_test: 2,
            },
            cluster_sep: 3.0,
            class_sigma: 1.0,
            style: StyleTransform::identity(4),
            seed,
        }
    }

    #[test]
    fn seen_count_matches_request() {
        let mut c = cfg(65, 30, 1);
        c.counts = PerClassCounts {
            source: 2,
            target_train: 1,
            target_test: 1,
        };
        let s = gen_synthetic_scenario(&c).unwrap();
        assert_eq!(s.seen_mask.iter().filter(|&&m| m).count(), 30);
        assert_eq!(s.target_train.classes_present(), s.seen_classes());
    }

    #[test]
    fn deterministic_for_fixed_arguments() {
        let a = gen_synthetic_scenario(&cfg(6, 3, 11)).unwrap();
        let b = gen_synthetic_scenario(&cfg(6, 3, 11)).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic_scenario(&cfg(6, 3, 12)).unwrap();
        assert_ne!(a.source_train, c.source_train);
    }

    #[test]
    fn rejects_degenerate_seen_counts() {
        assert_eq!(gen_synthetic_scenario(&cfg(5, 5, 0)), Err(Error::NoUnseenClasses));
        assert!(gen_synthetic_scenario(&cfg(5, 0, 0)).is_err());
    }

    #[test]
    fn class_means_respect_separation() {
        let mut rng = Rng::new(4, 0);
        let means = class_means(8, 5, 2.5, &mut rng);
        let mut min = f64::INFINITY;
        for i in 0..8 {
            for j in i + 1..8 {
                min = min.min(dist(&means[i], &means[j]));
            }
        }
        assert!((min - 2.5).abs() < 1e-12);
    }

    #[test]
    fn style_rejects_singular_matrix() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert!(StyleTransform::new(m, vec![0.0; 2], 0.0).is_err());
    }

    #[test]
    fn rotation_shift_is_orthogonal() {
        let mut rng = Rng::new(2, 0);
        let st = StyleTransform::rotation_shift(6, 0.7, 2.0, 0.0, &mut rng).unwrap();
        let qtq = st.matrix().t_matmul(st.matrix());
        assert!(qtq.max_abs_diff(&Matrix::identity(6)) < 1e-12);
        let norm = sqrt(st.shift().iter().map(|v| v * v).sum::<f64>());
        assert!((norm - 2.0).abs() < 1e-12);
    }

    #[test]
    fn split_seven_to_three() {
        let feats = Matrix::from_vec(12, 1, (0..12).map(f64::from).collect()).unwrap();
        let mut labels = vec![0; 10];
        labels.extend([1, 1]);
        let full = Dataset::new(feats, labels, 2).unwrap();
        let split = make_ht_split(&full, &[0], 0.7, 3).unwrap();
        assert_eq!(split.target_train.len(), 7);
        assert_eq!(split.target_test.class_counts(), vec![3, 1]);
        assert_eq!(split.discarded_ids.len(), 1);
        assert!(split.warnings.is_empty());
    }

    #[test]
    fn split_rejects_all_seen() {
        let full = Dataset::new(Matrix::zeros(4, 1), vec![0, 0, 1, 1], 2).unwrap();
        assert_eq!(
            make_ht_split(&full, &[0, 1], 0.7, 0).unwrap_err().to_string(),
            "no unseen classes"
        );
    }

    #[test]
    fn split_sends_singletons_to_test() {
        let full = Dataset::new(Matrix::zeros(5, 1), vec![0, 0, 0, 0, 1], 2).unwrap();
        let split = make_ht_split(&full, &[0], 0.5, 0).unwrap();
        assert_eq!(split.warnings.len(), 1);
        assert!(split.test_ids.contains(&4));
    }

    #[test]
    fn paired_layout() {
        let pc = PairedConfig {
            num_pairs: 6,
            dim: 4,
            counts: PerClassCounts {
                source: 3,
                target_train: 2,
                target_test: 2,
            },
            pair_overlap: 0.0,
            cluster_sep: 3.0,
            class_sigma: 1.0,
            style: StyleTransform::identity(4),
            seed: 5,
        };
        let (s, map) = gen_paired_toxicity_scenario(&pc).unwrap();
        assert_eq!(s.num_classes(), 12);
        assert_eq!(s.seen_classes(), map.non_toxic_classes());
        assert_eq!(s.seen_classes().len(), 6);
    }
}
