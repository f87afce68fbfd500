use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AugConfig, LabelClasses, RunConfig};
use super::run::{run_single, RunRecord};
use crate::error::{bail, Result};
use crate::model::ProjectorSpec;
use crate::probe::Verdict;
use crate::synthdata::LabelPolicy;

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Frozen views per sample, run under both label policies.
    Views,
    /// Size of the random label space (an integer or `"per_sample"`).
    Classes,
    /// Label noise fraction, run with and without augmentation.
    Noise,
    /// Subspace-noise strength in units of sigma.
    Strength,
    /// Number of projector patterns.
    Patterns,
    /// Training set size.
    N,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Views => "views",
            Axis::Classes => "classes",
            Axis::Noise => "noise",
            Axis::Strength => "strength",
            Axis::Patterns => "patterns",
            Axis::N => "n",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Axis::Views, Axis::Classes, Axis::Noise, Axis::Strength, Axis::Patterns, Axis::N]
            .into_iter()
            .find(|a| a.as_str() == s)
    }

    /// Arms run at every value of this axis.
    pub fn arms(self) -> &'static [&'static str] {
        match self {
            Axis::Views => &["preserve", "randomize"],
            Axis::Noise => &["aug", "no_aug"],
            _ => &[""],
        }
    }
}

/// One point on a sweep axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Int(u64),
    Float(f64),
    Name(String),
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Int(v) => write!(f, "{v}"),
            AxisValue::Float(v) => write!(f, "{v}"),
            AxisValue::Name(s) => f.write_str(s),
        }
    }
}

impl AxisValue {
    fn as_f64(&self) -> Option<f64> {
        match self {
            AxisValue::Int(v) => Some(*v as f64),
            AxisValue::Float(v) => Some(*v),
            AxisValue::Name(_) => None,
        }
    }

    fn as_count(&self) -> Option<usize> {
        match self {
            AxisValue::Int(v) => usize::try_from(*v).ok(),
            AxisValue::Float(v) if v.fract() == 0.0 && *v >= 0.0 => Some(*v as usize),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub base: RunConfig,
    pub axis: Axis,
    pub values: Vec<AxisValue>,
    pub seeds: Vec<u64>,
    /// Overrides `base.probe.schedule` when set.
    #[serde(default)]
    pub probe_schedule: Option<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            bail!(Config, "sweep over {} has no values", self.axis.as_str());
        }
        if self.seeds.is_empty() {
            bail!(Config, "sweep needs at least one seed");
        }
        for v in &self.values {
            for arm in self.axis.arms() {
                apply(&self.base, self.axis, v, arm)?.validate()?;
            }
        }
        Ok(())
    }

    /// Every run of the sweep in emission order: value, then arm, then seed.
    pub fn jobs(&self) -> Result<Vec<Job>> {
        let mut base = self.base.clone();
        if let Some(s) = self.probe_schedule {
            base.probe.schedule = s;
        }
        let mut jobs = Vec::new();
        for v in &self.values {
            for arm in self.axis.arms() {
                let config = apply(&base, self.axis, v, arm)?;
                for &seed in &self.seeds {
                    jobs.push(Job {
                        axis: self.axis.as_str().into(),
                        value: v.to_string(),
                        arm: (!arm.is_empty()).then(|| arm.to_string()),
                        seed,
                        config: config.clone(),
                    });
                }
            }
        }
        Ok(jobs)
    }
}

/// A single run of a sweep or grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub axis: String,
    pub value: String,
    pub arm: Option<String>,
    pub seed: u64,
    pub config: RunConfig,
}

impl Job {
    pub fn run_id(&self) -> String {
        match &self.arm {
            Some(arm) => format!("{}={}/{}/seed={}", self.axis, self.value, arm, self.seed),
            None => format!("{}={}/seed={}", self.axis, self.value, self.seed),
        }
    }

    pub fn run(&self) -> Result<RunRecord> {
        let mut r = run_single(&self.config, self.seed)?;
        r.run_id = self.run_id();
        r.axis.clone_from(&self.axis);
        r.value.clone_from(&self.value);
        r.arm.clone_from(&self.arm);
        Ok(r)
    }
}

/// Runs jobs in parallel and returns records in job order.
pub fn run_jobs(jobs: &[Job]) -> Result<Vec<RunRecord>> {
    jobs.par_iter()
        .map(|j| {
            log::info!("running {}", j.run_id());
            j.run()
        })
        .collect()
}

fn base_strength(base: &RunConfig) -> f64 {
    base.augmentation.strength().unwrap_or(1.0)
}

/// `base` with the axis set to `value` for the given arm.
fn apply(base: &RunConfig, axis: Axis, value: &AxisValue, arm: &str) -> Result<RunConfig> {
    let mut c = base.clone();
    let bad = || crate::error::Error::Config(format!("invalid value {value} for axis {}", axis.as_str()));
    match axis {
        Axis::Views => {
            let b = value.as_count().ok_or_else(bad)?;
            let policy = if arm == "randomize" { LabelPolicy::Randomize } else { LabelPolicy::Preserve };
            c.augmentation = AugConfig::SubspaceNoise { strength: base_strength(base), views: Some(b), policy };
        }
        Axis::Classes => {
            c.labels.classes = match value {
                AxisValue::Name(s) if s == "per_sample" => LabelClasses::PER_SAMPLE,
                v => LabelClasses::Count(v.as_count().ok_or_else(bad)?),
            };
        }
        Axis::Noise => {
            c.labels.noise_fraction = value.as_f64().ok_or_else(bad)?;
            c.augmentation = match (arm, &base.augmentation) {
                ("no_aug", _) => AugConfig::None,
                (_, AugConfig::None) => {
                    AugConfig::SubspaceNoise { strength: 1.0, views: None, policy: LabelPolicy::Preserve }
                }
                (_, aug) => aug.clone(),
            };
        }
        Axis::Strength => {
            let strength = value.as_f64().ok_or_else(bad)?;
            let (views, policy) = match base.augmentation {
                AugConfig::SubspaceNoise { views, policy, .. } => (views, policy),
                _ => (None, LabelPolicy::Preserve),
            };
            c.augmentation = AugConfig::SubspaceNoise { strength, views, policy };
        }
        Axis::Patterns => {
            c.model.projector = ProjectorSpec::InverseDistance { patterns: value.as_count().ok_or_else(bad)? };
        }
        Axis::N => c.data.n = value.as_count().ok_or_else(bad)?,
    }
    Ok(c)
}

/// Runs every `(value, arm, seed)` combination of `spec`.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    run_jobs(&spec.jobs()?)
}

fn named(spec: &SweepSpec, axis: Axis) -> Result<Vec<RunRecord>> {
    if spec.axis != axis {
        bail!(Config, "expected a {} sweep, got {}", axis.as_str(), spec.axis.as_str());
    }
    sweep(spec)
}

/// Frozen-view count sweep under both label policies.
pub fn sweep_b(spec: &SweepSpec) -> Result<Vec<RunRecord>> {
    named(spec, Axis::Views)
}

pub fn sweep_classes(spec: &SweepSpec) -> Result<Vec<RunRecord>> {
    named(spec, Axis::Classes)
}

/// Label-noise sweep with paired augmented and unaugmented arms.
pub fn sweep_noise(spec: &SweepSpec) -> Result<Vec<RunRecord>> {
    named(spec, Axis::Noise)
}

pub fn sweep_strength(spec: &SweepSpec) -> Result<Vec<RunRecord>> {
    named(spec, Axis::Strength)
}

pub fn sweep_projector(spec: &SweepSpec) -> Result<Vec<RunRecord>> {
    named(spec, Axis::Patterns)
}

/// Summary of one grid run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: usize,
    pub b: usize,
    pub seed: u64,
    pub policy: LabelPolicy,
    pub memorized: bool,
    pub verdict: Verdict,
    pub train_acc: f64,
    pub probe_init: f64,
    pub probe_final: f64,
    pub failed: bool,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub n_values: Vec<usize>,
    pub b_values: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Label-preserving cells, one per `(n, B, seed)`, in that order.
    pub cells: Vec<GridCell>,
    /// Randomize-policy cells in the same order.
    pub randomized: Vec<GridCell>,
    /// Largest `n * B` at which the Randomize arm memorized in every seed.
    pub capacity_estimate: Option<usize>,
    pub records: Vec<RunRecord>,
}

impl GridResult {
    pub fn cell(&self, n: usize, b: usize, policy: LabelPolicy) -> Vec<&GridCell> {
        let cells = match policy {
            LabelPolicy::Preserve => &self.cells,
            LabelPolicy::Randomize => &self.randomized,
        };
        cells.iter().filter(|c| c.n == n && c.b == b).collect()
    }
}

/// Axes, seeds and base configuration of a capacity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub n_values: Vec<usize>,
    pub b_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub base: RunConfig,
}

impl Default for GridSpec {
    /// The default toy phase grid: it straddles `n * B` around the
    /// 1024 projector patterns of the default model.
    fn default() -> Self {
        Self {
            n_values: vec![50, 100, 200, 400],
            b_values: vec![1, 4, 16, 64],
            seeds: vec![0, 1, 2],
            base: RunConfig::default(),
        }
    }
}

impl GridSpec {
    pub fn run(&self) -> Result<GridResult> {
        capacity_grid(&self.n_values, &self.b_values, &self.base, &self.seeds)
    }
}

fn grid_job(base: &RunConfig, n: usize, b: usize, policy: LabelPolicy, seed: u64) -> Job {
    let mut config = base.clone();
    config.data.n = n;
    config.augmentation = AugConfig::SubspaceNoise { strength: base_strength(base), views: Some(b), policy };
    let arm = match policy {
        LabelPolicy::Preserve => "preserve",
        LabelPolicy::Randomize => "randomize",
    };
    Job { axis: "grid".into(), value: format!("n={n},B={b}"), arm: Some(arm.into()), seed, config }
}

fn summarize(job: &Job, r: &RunRecord, policy: LabelPolicy) -> GridCell {
    GridCell {
        n: job.config.data.n,
        b: job.config.augmentation.views_per_sample().unwrap_or(1),
        seed: job.seed,
        policy,
        memorized: r.memorized,
        verdict: r.verdict.verdict,
        train_acc: r.train_acc,
        probe_init: r.probe_init.accuracy,
        probe_final: r.probe_final.accuracy,
        failed: r.failed,
        run_id: r.run_id.clone(),
    }
}

/// Capacity phase grid over `n x B` with both label policies.
///
/// At `B = 1` the two policies coincide (the only view is the base input),
/// so the Randomize cell reuses the label-preserving run.
pub fn capacity_grid(n_values: &[usize], b_values: &[usize], base: &RunConfig, seeds: &[u64]) -> Result<GridResult> {
    if n_values.is_empty() || b_values.is_empty() || seeds.is_empty() {
        bail!(Config, "grid axes and seeds must be non-empty");
    }
    if b_values.contains(&0) {
        bail!(Config, "B values must be positive");
    }
    let mut jobs = Vec::new();
    for &n in n_values {
        for &b in b_values {
            for &seed in seeds {
                jobs.push((grid_job(base, n, b, LabelPolicy::Preserve, seed), LabelPolicy::Preserve));
                if b > 1 {
                    jobs.push((grid_job(base, n, b, LabelPolicy::Randomize, seed), LabelPolicy::Randomize));
                }
            }
        }
    }
    for (job, _) in &jobs {
        job.config.validate()?;
    }
    let just_jobs: Vec<Job> = jobs.iter().map(|(j, _)| j.clone()).collect();
    let records = run_jobs(&just_jobs)?;

    let mut cells = Vec::new();
    let mut randomized = Vec::new();
    for ((job, policy), r) in jobs.iter().zip(&records) {
        let cell = summarize(job, r, *policy);
        match policy {
            LabelPolicy::Preserve => {
                if cell.b == 1 {
                    randomized.push(GridCell { policy: LabelPolicy::Randomize, ..cell.clone() });
                }
                cells.push(cell);
            }
            LabelPolicy::Randomize => randomized.push(cell),
        }
    }

    let mut capacity_estimate = None;
    for &n in n_values {
        for &b in b_values {
            let all = randomized.iter().filter(|c| c.n == n && c.b == b).all(|c| c.memorized);
            if all {
                capacity_estimate = capacity_estimate.max(Some(n * b));
            }
        }
    }
    Ok(GridResult {
        n_values: n_values.to_vec(),
        b_values: b_values.to_vec(),
        seeds: seeds.to_vec(),
        cells,
        randomized,
        capacity_estimate,
        records,
    })
}
