//! Gaussian-mixture toy data with a signal block and a noise block.
//!
//! Sample `i` has a true cluster `z_i` drawn uniformly from `0..C`. Its first
//! `d1` coordinates are Gaussian around the cluster mean with covariance
//! `ratio * sigma^2 * I`; the remaining `d - d1` coordinates are pure noise
//! with covariance `sigma^2 * I`.

mod augment;
mod io;
mod labels;

pub(crate) use augment::add_subspace_noise;
pub use augment::{
    iid_augment, materialize_augmentations, mixup_pair, subspace_augment, AlphaDist, AugmentationSpec, LabelPolicy,
    ViewSet,
};
pub use io::{read_dataset_binary, read_dataset_csv, write_dataset_binary, write_dataset_csv};
pub use labels::{randomize_labels, LabelSpace};

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::{rng_at, stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyDataConfig {
    pub n: usize,
    pub d: usize,
    pub d1: usize,
    pub num_classes: usize,
    pub sigma: f64,
    /// Variance of the signal block relative to `sigma^2`.
    pub signal_variance_ratio: f64,
    pub seed: u64,
}

impl Default for ToyDataConfig {
    fn default() -> Self {
        Self { n: 100, d: 32, d1: 8, num_classes: 10, sigma: 1.0, signal_variance_ratio: 0.1, seed: 0 }
    }
}

impl ToyDataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d1 >= self.d {
            bail!(Config, "need 0 < d1 < d, got d1 = {}, d = {}", self.d1, self.d);
        }
        if self.num_classes == 0 {
            bail!(Config, "num_classes must be at least 1");
        }
        if self.n < self.num_classes {
            bail!(Config, "n = {} is smaller than num_classes = {}", self.n, self.num_classes);
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            bail!(Config, "sigma must be positive, got {}", self.sigma);
        }
        if !(self.signal_variance_ratio > 0.0 && self.signal_variance_ratio.is_finite()) {
            bail!(Config, "signal_variance_ratio must be positive");
        }
        Ok(())
    }
}

/// Inputs with their clean labels, randomized labels and true clusters.
///
/// Labels are stored as class indices; [`LabeledDataset::clean_onehot`] and
/// [`LabeledDataset::random_onehot`] give the one-hot matrices used as
/// regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    /// `n x d`, one sample per row.
    pub inputs: Array2<T>,
    pub d1: usize,
    pub clean_labels: Vec<usize>,
    pub num_classes: usize,
    pub random_labels: Vec<usize>,
    /// Size `C'` of the randomized label space.
    pub num_random_classes: usize,
    pub true_cluster: Vec<usize>,
    /// `C x d1`; empty when the dataset was loaded from a format that
    /// does not carry the means.
    pub cluster_means: Array2<T>,
    pub sigma: f64,
    pub seed: u64,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn input(&self, i: usize) -> ArrayView1<'_, T> {
        self.inputs.row(i)
    }

    pub fn clean_onehot(&self) -> Array2<T> {
        onehot(&self.clean_labels, self.num_classes)
    }

    pub fn random_onehot(&self) -> Array2<T> {
        onehot(&self.random_labels, self.num_random_classes)
    }

    /// Keeps the rows listed in `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(ndarray::Axis(0), idx),
            d1: self.d1,
            clean_labels: idx.iter().map(|&i| self.clean_labels[i]).collect(),
            num_classes: self.num_classes,
            random_labels: idx.iter().map(|&i| self.random_labels[i]).collect(),
            num_random_classes: self.num_random_classes,
            true_cluster: idx.iter().map(|&i| self.true_cluster[i]).collect(),
            cluster_means: self.cluster_means.clone(),
            sigma: self.sigma,
            seed: self.seed,
        }
    }

    pub(crate) fn check_consistent(&self) -> Result<()> {
        let n = self.len();
        if self.clean_labels.len() != n || self.random_labels.len() != n || self.true_cluster.len() != n {
            bail!(Data, "label sequences do not match the {n} inputs");
        }
        if self.clean_labels.iter().any(|&c| c >= self.num_classes)
            || self.random_labels.iter().any(|&c| c >= self.num_random_classes)
        {
            bail!(Data, "label index out of range");
        }
        Ok(())
    }
}

/// One-hot rows for a sequence of class indices.
pub fn onehot<T: Scalar>(labels: &[usize], num_classes: usize) -> Array2<T> {
    let mut out = Array2::zeros((labels.len(), num_classes));
    for (i, &c) in labels.iter().enumerate() {
        out[[i, c]] = T::one();
    }
    out
}

fn cluster_means<T: Scalar>(cfg: &ToyDataConfig) -> Array2<T> {
    let mut rng = rng_at(cfg.seed, &[stream::CLUSTER_MEANS]);
    Array2::from_shape_fn((cfg.num_classes, cfg.d1), |_| T::of(rng.sample::<f64, _>(StandardNormal)))
}

fn draw_samples<T: Scalar>(cfg: &ToyDataConfig, means: &Array2<T>, tag: u64, count: usize) -> (Array2<T>, Vec<usize>) {
    let signal_sd = cfg.sigma * cfg.signal_variance_ratio.sqrt();
    let mut inputs = Array2::zeros((count, cfg.d));
    let mut clusters = Vec::with_capacity(count);
    for (i, mut row) in inputs.rows_mut().into_iter().enumerate() {
        let mut rng = rng_at(cfg.seed, &[tag, i as u64]);
        let z = rng.random_range(0..cfg.num_classes);
        for j in 0..cfg.d {
            let g: f64 = rng.sample(StandardNormal);
            row[j] = if j < cfg.d1 { means[[z, j]] + T::of(signal_sd * g) } else { T::of(cfg.sigma * g) };
        }
        clusters.push(z);
    }
    (inputs, clusters)
}

fn assemble<T: Scalar>(
    cfg: &ToyDataConfig,
    means: Array2<T>,
    inputs: Array2<T>,
    clusters: Vec<usize>,
) -> LabeledDataset<T> {
    LabeledDataset {
        inputs,
        d1: cfg.d1,
        clean_labels: clusters.clone(),
        num_classes: cfg.num_classes,
        random_labels: clusters.clone(),
        num_random_classes: cfg.num_classes,
        true_cluster: clusters,
        cluster_means: means,
        sigma: cfg.sigma,
        seed: cfg.seed,
    }
}

/// Draws the toy dataset. Clean labels are the true clusters; random labels
/// start equal to them until [`randomize_labels`] is applied.
pub fn generate_toy_data<T: Scalar>(cfg: &ToyDataConfig) -> Result<LabeledDataset<T>> {
    cfg.validate()?;
    let means = cluster_means(cfg);
    let (inputs, clusters) = draw_samples(cfg, &means, stream::SAMPLES, cfg.n);
    Ok(assemble(cfg, means, inputs, clusters))
}

/// Training set plus an independent held-out set drawn from the same mixture
/// (same cluster means, disjoint sample streams).
pub fn generate_toy_split<T: Scalar>(
    cfg: &ToyDataConfig,
    n_test: usize,
) -> Result<(LabeledDataset<T>, LabeledDataset<T>)> {
    cfg.validate()?;
    let means = cluster_means(cfg);
    let (inputs, clusters) = draw_samples(cfg, &means, stream::SAMPLES, cfg.n);
    let train = assemble(cfg, means.clone(), inputs, clusters);
    let (inputs, clusters) = draw_samples(cfg, &means, stream::TEST_SET, n_test);
    let test = assemble(cfg, means, inputs, clusters);
    Ok((train, test))
}
