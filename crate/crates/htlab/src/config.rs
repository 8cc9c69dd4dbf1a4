//! Experiment configuration files (TOML).
//!
//! ```toml
//! output_dir = "results"
//! seeds = [0, 1, 2]
//! ensemble_alphas = [0.5]
//!
//! [scenario]
//! kind = "synthetic"
//! classes = 10
//! seen = 6
//!
//! [model]
//! hidden = [64, 64]
//!
//! [target]
//! epochs = 20
//!
//! [[protocols]]
//! kind = "naive_ft"
//!
//! [[protocols]]
//! kind = "lolsgd_distill_rank"
//! ```
//!
//! Every omitted key takes the value of the reference setup below.

use std::fs;
use std::path::{Path, PathBuf};

use htlab_core::data::{
    gen_paired_toxicity_scenario, gen_synthetic_scenario, HTScenario, PairedConfig, PerClassCounts, StyleTransform,
    SyntheticConfig, ToxicityMap,
};
use htlab_core::losses::{LossSpec, RankSign};
use htlab_core::model::{Activation, MlpSpec};
use htlab_core::optim::{LocalBudget, LolConfig, SgdConfig, SwaCadence, SwaConfig};
use htlab_core::transfer::{Protocol, ProtocolKind};
use htlab_core::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario_io;

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label written to every result row. Defaults to the scenario kind.
    #[serde(default)]
    pub scenario_id: Option<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub retain_checkpoints: bool,
    /// Singular values written per curve row; defaults to `min(20, width)`.
    #[serde(default)]
    pub k_spectrum: Option<usize>,
    /// Mixing coefficients of the post-hoc SE and WiSE rows.
    #[serde(default)]
    pub ensemble_alphas: Vec<f64>,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default = "SgdSection::source")]
    pub source: SgdSection,
    #[serde(default = "SgdSection::target")]
    pub target: SgdSection,
    pub protocols: Vec<ProtocolSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Gaussian class clusters with a rotation-plus-shift target style.
    Synthetic,
    /// Confusable toxic / non-toxic class pairs.
    Paired,
    /// A directory written by `htlab gen` (or by hand in the same layout).
    Import,
}

/// Scenario source. Generator keys are ignored for `import`, `path` is
/// ignored for the generated kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    pub path: Option<PathBuf>,
    /// Fixed scenario seed. When absent each run seed draws its own scenario.
    pub seed: Option<u64>,
    pub classes: usize,
    pub seen: usize,
    pub pairs: usize,
    pub pair_overlap: f64,
    pub dim: usize,
    pub source_per_class: usize,
    pub target_train_per_class: usize,
    pub target_test_per_class: usize,
    pub cluster_sep: f64,
    pub class_sigma: f64,
    /// Rotation angle (radians) of the target style.
    pub style_angle: f64,
    /// Norm of the target style's translation.
    pub style_shift: f64,
    pub style_noise: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Synthetic,
            path: None,
            seed: None,
            classes: 10,
            seen: 6,
            pairs: 6,
            pair_overlap: 0.6,
            dim: 16,
            source_per_class: 200,
            target_train_per_class: 60,
            target_test_per_class: 40,
            cluster_sep: 4.0,
            class_sigma: 1.0,
            style_angle: 0.5,
            style_shift: 2.0,
            style_noise: 0.0,
        }
    }
}

impl ScenarioSection {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ScenarioKind::Synthetic => "synthetic",
            ScenarioKind::Paired => "paired",
            ScenarioKind::Import => "import",
        }
    }

    /// Whether the scenario depends on the run seed.
    pub fn per_seed(&self) -> bool {
        self.kind != ScenarioKind::Import && self.seed.is_none()
    }

    fn counts(&self) -> PerClassCounts {
        PerClassCounts {
            source: self.source_per_class,
            target_train: self.target_train_per_class,
            target_test: self.target_test_per_class,
        }
    }

    fn style(&self, seed: u64) -> Result<StyleTransform> {
        let mut rng = Rng::new(seed, 0).derive_str("style");
        Ok(StyleTransform::rotation_shift(
            self.dim,
            self.style_angle,
            self.style_shift,
            self.style_noise,
            &mut rng,
        )?)
    }

    pub fn synthetic(&self, seed: u64) -> Result<SyntheticConfig> {
        Ok(SyntheticConfig {
            num_classes: self.classes,
            num_seen: self.seen,
            dim: self.dim,
            counts: self.counts(),
            cluster_sep: self.cluster_sep,
            class_sigma: self.class_sigma,
            style: self.style(seed)?,
            seed,
        })
    }

    pub fn paired(&self, seed: u64) -> Result<PairedConfig> {
        Ok(PairedConfig {
            num_pairs: self.pairs,
            dim: self.dim,
            counts: self.counts(),
            pair_overlap: self.pair_overlap,
            cluster_sep: self.cluster_sep,
            class_sigma: self.class_sigma,
            style: self.style(seed)?,
            seed,
        })
    }

    /// Builds the scenario seen by run seed `seed`.
    pub fn build(&self, seed: u64) -> Result<(HTScenario, Option<ToxicityMap>)> {
        let seed = self.seed.unwrap_or(seed);
        match self.kind {
            ScenarioKind::Synthetic => Ok((gen_synthetic_scenario(&self.synthetic(seed)?)?, None)),
            ScenarioKind::Paired => {
                let (s, t) = gen_paired_toxicity_scenario(&self.paired(seed)?)?;
                Ok((s, Some(t)))
            }
            ScenarioKind::Import => {
                let path = self.path.as_ref().ok_or_else(|| config_err("import scenario needs a path"))?;
                scenario_io::import_scenario(path)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub activation: String,
    pub batchnorm: bool,
    pub in_adapter: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: "relu".into(),
            batchnorm: false,
            in_adapter: false,
        }
    }
}

impl ModelSection {
    pub fn spec(&self, dim: usize, classes: usize) -> Result<MlpSpec> {
        let widths = std::iter::once(dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(classes))
            .collect();
        let spec = MlpSpec::new(widths, Activation::parse(&self.activation)?)
            .with_batchnorm(self.batchnorm)
            .with_in_adapter(self.in_adapter);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
}

fn default_lr() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_wd() -> f64 {
    5e-4
}
fn default_batch() -> usize {
    32
}

impl SgdSection {
    pub fn source() -> Self {
        Self {
            lr: default_lr(),
            momentum: default_momentum(),
            weight_decay: default_wd(),
            batch_size: default_batch(),
            epochs: 30,
        }
    }

    pub fn target() -> Self {
        Self {
            epochs: 20,
            ..Self::source()
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
        }
    }
}

/// One protocol. Loss weights default to 1 (distillation) and 3e-6 (rank)
/// for kinds that use the term, 0 otherwise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub kind: String,
    pub lambda_distill: Option<f64>,
    pub lambda_rank: Option<f64>,
    /// "penalize" (default) or "reward".
    pub rank_sign: Option<String>,
    pub lol_subsets: Option<usize>,
    pub lol_leave_out: Option<usize>,
    pub lol_outer_step: Option<f64>,
    /// Local run length as a fraction of an epoch of retained data.
    pub lol_local_fraction: Option<f64>,
    /// Local run length in minibatches; overrides the fraction.
    pub lol_local_steps: Option<usize>,
    pub swa_start_epoch: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
}

pub const DEFAULT_LAMBDA_DISTILL: f64 = 1.0;
pub const DEFAULT_LAMBDA_RANK: f64 = 3e-6;
pub const DEFAULT_LOL_SUBSETS: usize = 10;
pub const DEFAULT_LOL_LEAVE_OUT: usize = 3;

impl ProtocolSection {
    pub fn of(kind: ProtocolKind) -> Self {
        Self {
            kind: kind.as_str().into(),
            ..Self::default()
        }
    }

    pub fn build(&self, target: &SgdSection) -> Result<Protocol> {
        let kind = ProtocolKind::parse(&self.kind)?;
        let mut sgd = target.sgd();
        sgd.lr = self.lr.unwrap_or(sgd.lr);
        sgd.epochs = self.epochs.unwrap_or(sgd.epochs);
        let rank_sign = match self.rank_sign.as_deref() {
            None | Some("penalize") => RankSign::Penalize,
            Some("reward") => RankSign::Reward,
            Some(other) => return Err(config_err(format!("unknown rank_sign {other:?}"))),
        };
        let on = |uses: bool, v: f64| if uses { v } else { 0.0 };
        let loss = LossSpec {
            lambda_distill: self
                .lambda_distill
                .unwrap_or(on(kind.uses_distill(), DEFAULT_LAMBDA_DISTILL)),
            lambda_rank: self.lambda_rank.unwrap_or(on(kind.uses_rank(), DEFAULT_LAMBDA_RANK)),
            rank_sign,
        };
        let lol = kind.uses_lolsgd().then(|| {
            let mut lol = LolConfig::new(
                self.lol_subsets.unwrap_or(DEFAULT_LOL_SUBSETS),
                self.lol_leave_out.unwrap_or(DEFAULT_LOL_LEAVE_OUT),
            );
            if let Some(f) = self.lol_local_fraction {
                lol.local_budget = LocalBudget::EpochFraction(f);
            }
            if let Some(n) = self.lol_local_steps {
                lol.local_budget = LocalBudget::Steps(n);
            }
            lol.outer_step = self.lol_outer_step.unwrap_or(lol.outer_step);
            lol
        });
        let swa = kind.uses_swa().then(|| SwaConfig {
            start_epoch: self.swa_start_epoch.unwrap_or(sgd.epochs / 2),
            cadence: if kind == ProtocolKind::Swa {
                SwaCadence::PerEpoch
            } else {
                SwaCadence::PerIteration
            },
        });
        Ok(Protocol {
            kind,
            loss,
            sgd,
            lol,
            swa,
        })
    }
}

impl ExperimentConfig {
    /// The reference setup with the given protocols and seeds.
    pub fn reference(protocols: &[ProtocolKind], seeds: &[u64]) -> Self {
        Self {
            scenario_id: None,
            output_dir: default_output_dir(),
            seeds: seeds.to_vec(),
            retain_checkpoints: false,
            k_spectrum: None,
            ensemble_alphas: Vec::new(),
            scenario: ScenarioSection::default(),
            model: ModelSection::default(),
            source: SgdSection::source(),
            target: SgdSection::target(),
            protocols: protocols.iter().map(|&k| ProtocolSection::of(k)).collect(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.check_shape()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml(&text)
    }

    fn check_shape(&self) -> Result<()> {
        if self.protocols.is_empty() {
            return Err(config_err("at least one protocol is required"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("at least one seed is required"));
        }
        if let Some(a) = self.ensemble_alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(config_err(format!("ensemble alpha {a} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn scenario_id(&self) -> String {
        self.scenario_id.clone().unwrap_or_else(|| self.scenario.kind_name().to_string())
    }

    /// Protocols built against the target settings, in file order.
    pub fn build_protocols(&self) -> Result<Vec<Protocol>> {
        self.protocols.iter().map(|p| p.build(&self.target)).collect()
    }

    /// Everything the source model for `seed` depends on, as text.
    pub fn source_fingerprint(&self, seed: u64) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            seed: u64,
            scenario: &'a ScenarioSection,
            model: &'a ModelSection,
            source: &'a SgdSection,
        }
        toml::to_string(&Key {
            seed,
            scenario: &self.scenario,
            model: &self.model,
            source: &self.source,
        })
        .expect("fingerprint serializes")
    }
}

/// Parses a comma-separated seed list such as `HTLAB_SEED=1,2,3`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let seeds = s
        .split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|_| config_err(format!("bad seed {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(config_err("empty seed list"));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_reference_defaults() {
        let cfg = ExperimentConfig::from_toml("seeds = [1]\n[[protocols]]\nkind = \"naive_ft\"\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::reference(&[ProtocolKind::NaiveFt], &[1]));
        let round = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn protocol_defaults_follow_the_kind() {
        let p = ProtocolSection::of(ProtocolKind::LolsgdDistillRank)
            .build(&SgdSection::target())
            .unwrap();
        assert_eq!(p.loss.lambda_distill, DEFAULT_LAMBDA_DISTILL);
        assert_eq!(p.loss.lambda_rank, DEFAULT_LAMBDA_RANK);
        assert_eq!(p.lol, Some(LolConfig::new(10, 3)));
        let p = ProtocolSection::of(ProtocolKind::FrozenFt).build(&SgdSection::target()).unwrap();
        assert_eq!(p.loss, LossSpec::CE_ONLY);
        assert!(p.lol.is_none() && p.swa.is_none());
        let p = ProtocolSection::of(ProtocolKind::SwadLite).build(&SgdSection::target()).unwrap();
        assert_eq!(p.swa.unwrap().cadence, SwaCadence::PerIteration);
    }

    #[test]
    fn shape_errors() {
        assert!(ExperimentConfig::from_toml("seeds = [1]\nprotocols = []\n").is_err());
        assert!(ExperimentConfig::from_toml("seeds = []\n[[protocols]]\nkind = \"naive_ft\"\n").is_err());
        assert!(ExperimentConfig::from_toml("seeds = [1]\nbogus = 1\n[[protocols]]\nkind = \"naive_ft\"\n").is_err());
        let bad_kind = ExperimentConfig::from_toml("seeds = [1]\n[[protocols]]\nkind = \"magic\"\n").unwrap();
        assert!(bad_kind.build_protocols().is_err());
    }

    #[test]
    fn scenario_sections_parse() {
        let cfg = ExperimentConfig::from_toml(
            "seeds = [1]\n[scenario]\nkind = \"paired\"\npairs = 3\ndim = 4\n[[protocols]]\nkind = \"naive_ft\"\n",
        )
        .unwrap();
        let (s, t) = cfg.scenario.build(5).unwrap();
        assert_eq!(s.num_classes(), 6);
        assert_eq!(t.unwrap().pairs.len(), 3);
        assert!(cfg.scenario.per_seed());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "seeds = [1]\n[scenario]\nclases = 4\n[[protocols]]\nkind = \"naive_ft\"\n",
            "seeds = [1]\n[model]\nhiden = [4]\n[[protocols]]\nkind = \"naive_ft\"\n",
            "seeds = [1]\n[[protocols]]\nkind = \"naive_ft\"\nlamda_rank = 1.0\n",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert!(parse_seed_list("1,x").is_err());
    }
}
