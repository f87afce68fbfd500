use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::model::{ModelSpec, ProjectorSpec};
use crate::probe::{DEFAULT_AUG_PAIRS, DEFAULT_CROSS_PAIRS, DEFAULT_K, DEFAULT_MARGIN};
use crate::synthdata::{AlphaDist, LabelPolicy, ToyDataConfig};
use crate::train::{OptimizerConfig, TrainBudget};

/// Toy data shape. The sampling seed is derived from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n: usize,
    pub d: usize,
    pub d1: usize,
    pub num_classes: usize,
    pub sigma: f64,
    pub signal_variance_ratio: f64,
    /// Held-out points used for clean probing and invariance.
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let t = ToyDataConfig::default();
        Self {
            n: t.n,
            d: t.d,
            d1: t.d1,
            num_classes: t.num_classes,
            sigma: t.sigma,
            signal_variance_ratio: t.signal_variance_ratio,
            n_test: 1000,
        }
    }
}

impl DataConfig {
    pub fn toy(&self, seed: u64) -> ToyDataConfig {
        ToyDataConfig {
            n: self.n,
            d: self.d,
            d1: self.d1,
            num_classes: self.num_classes,
            sigma: self.sigma,
            signal_variance_ratio: self.signal_variance_ratio,
            seed,
        }
    }
}

/// Size of the randomized label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelClasses {
    Count(usize),
    Named(PerSample),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerSample {
    PerSample,
}

impl LabelClasses {
    pub const PER_SAMPLE: Self = LabelClasses::Named(PerSample::PerSample);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub classes: LabelClasses,
    pub noise_fraction: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { classes: LabelClasses::Count(10), noise_fraction: 1.0 }
    }
}

/// Training augmentation. Subspace noise is drawn online unless `views` is
/// set, in which case `views` frozen views per sample are materialized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugConfig {
    #[default]
    None,
    SubspaceNoise {
        /// In units of sigma.
        #[serde(default = "one")]
        strength: f64,
        #[serde(default)]
        views: Option<usize>,
        #[serde(default = "preserve")]
        policy: LabelPolicy,
    },
    Mixup {
        #[serde(default)]
        alpha: AlphaDist,
    },
    Iid {
        subset_size: usize,
        views_per_sample: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn preserve() -> LabelPolicy {
    LabelPolicy::Preserve
}

impl AugConfig {
    /// Views per sample as reported in records: `None` for online draws.
    pub fn views_per_sample(&self) -> Option<usize> {
        match self {
            AugConfig::None => Some(1),
            AugConfig::SubspaceNoise { views, .. } => *views,
            AugConfig::Mixup { .. } => None,
            AugConfig::Iid { views_per_sample, .. } => Some(views_per_sample + 1),
        }
    }

    pub fn strength(&self) -> Option<f64> {
        match self {
            AugConfig::SubspaceNoise { strength, .. } => Some(*strength),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub k_neighbors: usize,
    pub margin: f64,
    pub aug_pairs: usize,
    pub cross_pairs: usize,
    /// Held-out points used by the invariance estimator.
    pub invariance_points: usize,
    /// Epochs between in-training probe callbacks; `0` disables them.
    pub schedule: usize,
    /// Also probe every layer at the end of training.
    pub per_layer: bool,
    /// Frozen views drawn for the loss decomposition of runs trained
    /// without a materialized set.
    pub decompose_views: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            k_neighbors: DEFAULT_K,
            margin: DEFAULT_MARGIN,
            aug_pairs: DEFAULT_AUG_PAIRS,
            cross_pairs: DEFAULT_CROSS_PAIRS,
            invariance_points: 200,
            schedule: 10,
            per_layer: false,
            decompose_views: 4,
        }
    }
}

/// Everything that defines one training run except its seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub labels: LabelConfig,
    pub model: ModelSpec,
    pub augmentation: AugConfig,
    pub optimizer: OptimizerConfig,
    pub budget: TrainBudget,
    pub probe: ProbeConfig,
    /// Record wall-clock time in the CSV output. Off by default so that
    /// reruns produce identical files.
    pub record_wall_time: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.toy(0).validate()?;
        if self.data.n_test == 0 {
            bail!(Config, "n_test must be positive");
        }
        self.optimizer.validate()?;
        self.budget.validate()?;
        match self.labels.classes {
            LabelClasses::Count(0) => bail!(Config, "label classes must be positive"),
            LabelClasses::Named(_) if self.labels.noise_fraction < 1.0 => {
                bail!(Config, "per-sample labels require noise_fraction = 1")
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.labels.noise_fraction) {
            bail!(Config, "noise_fraction must lie in [0, 1]");
        }
        match &self.augmentation {
            AugConfig::SubspaceNoise { strength, views, .. } => {
                if !(*strength >= 0.0 && strength.is_finite()) {
                    bail!(Config, "augmentation strength must be non-negative");
                }
                if *views == Some(0) {
                    bail!(Config, "materialized views must be at least 1");
                }
            }
            AugConfig::Iid { subset_size, .. } if *subset_size == 0 => {
                bail!(Config, "iid subset_size must be positive")
            }
            _ => {}
        }
        let p = &self.probe;
        if p.k_neighbors == 0 || p.aug_pairs == 0 || p.cross_pairs == 0 || p.decompose_views == 0 {
            bail!(Config, "probe counts must be positive");
        }
        if p.invariance_points < 2 {
            bail!(Config, "invariance needs at least two points");
        }
        Ok(())
    }

    /// Number of projector patterns, when the projector has any.
    pub fn patterns(&self) -> Option<usize> {
        match self.model.projector {
            ProjectorSpec::InverseDistance { patterns } => Some(patterns),
            _ => None,
        }
    }
}
