use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{bail, Result};
use crate::rng::{rng_at, stream, Rng};
use crate::scalar::Scalar;

/// Distribution of the mixup weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaDist {
    #[default]
    Uniform,
    Beta {
        a: f64,
        b: f64,
    },
    Fixed {
        alpha: f64,
    },
}

impl AlphaDist {
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            AlphaDist::Uniform => rng.random::<f64>(),
            AlphaDist::Beta { a, b } => Beta::new(a, b).map(|d| d.sample(rng)).unwrap_or(0.5),
            AlphaDist::Fixed { alpha } => alpha,
        }
    }
}

/// How materialized views are labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolicy {
    /// Every view carries the label of its base sample.
    Preserve,
    /// Each augmented view draws a fresh uniform label.
    Randomize,
}

/// A frozen set of `per_sample` views for each of `n` base samples.
///
/// View 0 of every sample is the unaugmented input itself and always
/// carries the base sample's label, so `per_sample = 1` reproduces the
/// plain dataset. Rows are laid out sample-major: view `a` of sample `i`
/// is row `i * per_sample + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet<T> {
    pub views: Array2<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub per_sample: usize,
    pub policy: LabelPolicy,
}

impl<T: Scalar> ViewSet<T> {
    pub fn num_samples(&self) -> usize {
        self.views.nrows() / self.per_sample
    }

    pub fn total_views(&self) -> usize {
        self.views.nrows()
    }

    pub fn view(&self, sample: usize, a: usize) -> ArrayView1<'_, T> {
        self.views.row(sample * self.per_sample + a)
    }

    /// All views of one sample as a `per_sample x d` block.
    pub fn sample_views(&self, sample: usize) -> ArrayView2<'_, T> {
        let b = self.per_sample;
        self.views.slice(ndarray::s![sample * b..(sample + 1) * b, ..])
    }

    pub fn label(&self, sample: usize, a: usize) -> usize {
        self.labels[sample * self.per_sample + a]
    }

    /// Expands views into a flat dataset. Clean labels and clusters are
    /// inherited from the base sample; random labels are the view labels.
    pub fn flatten(&self, base: &LabeledDataset<T>) -> LabeledDataset<T> {
        let b = self.per_sample;
        let rep = |v: &[usize]| -> Vec<usize> { v.iter().flat_map(|&x| std::iter::repeat_n(x, b)).collect() };
        LabeledDataset {
            inputs: self.views.clone(),
            d1: base.d1,
            clean_labels: rep(&base.clean_labels),
            num_classes: base.num_classes,
            random_labels: self.labels.clone(),
            num_random_classes: self.num_classes,
            true_cluster: rep(&base.true_cluster),
            cluster_means: base.cluster_means.clone(),
            sigma: base.sigma,
            seed: base.seed,
        }
    }
}

/// Transformation family applied to training inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum AugmentationSpec<T> {
    None,
    /// Adds `N(0, strength^2)` noise to coordinates `d1..d`.
    SubspaceNoise {
        d1: usize,
        strength: T,
    },
    /// Online mixup with a uniformly drawn partner.
    Mixup {
        alpha: AlphaDist,
    },
    /// Descriptor for [`iid_augment`]; must be realized before training.
    IidResample {
        subset_size: usize,
        views_per_sample: usize,
    },
    Materialized(ViewSet<T>),
}

impl<T: Scalar> AugmentationSpec<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AugmentationSpec::None => "none",
            AugmentationSpec::SubspaceNoise { .. } => "subspace_noise",
            AugmentationSpec::Mixup { .. } => "mixup",
            AugmentationSpec::IidResample { .. } => "iid_resample",
            AugmentationSpec::Materialized(_) => "materialized",
        }
    }
}

/// Adds noise to `row[d1..]` in place.
pub(crate) fn add_subspace_noise<T: Scalar>(row: &mut [T], d1: usize, strength: T, rng: &mut Rng) {
    if strength == T::zero() {
        return;
    }
    for v in row[d1..].iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v += strength * T::of(g);
    }
}

/// Returns `x + a` with `a` zero on the signal block and Gaussian with
/// standard deviation `strength` on the noise block.
pub fn subspace_augment<T: Scalar>(
    x: ArrayView1<'_, T>,
    spec: &AugmentationSpec<T>,
    rng: &mut Rng,
) -> Result<Array1<T>> {
    let AugmentationSpec::SubspaceNoise { d1, strength } = *spec else {
        bail!(Input, "subspace_augment needs a subspace-noise spec, got {}", spec.kind_name());
    };
    if d1 > x.len() {
        bail!(Input, "signal block size {d1} exceeds input dimension {}", x.len());
    }
    let mut out = x.to_owned();
    add_subspace_noise(out.as_slice_mut().unwrap(), d1, strength, rng);
    Ok(out)
}

/// Convex combination of two inputs and their label vectors.
pub fn mixup_pair<T: Scalar>(
    x1: ArrayView1<'_, T>,
    y1: ArrayView1<'_, T>,
    x2: ArrayView1<'_, T>,
    y2: ArrayView1<'_, T>,
    alpha: T,
) -> Result<(Array1<T>, Array1<T>)> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        bail!(Input, "mixup weight must lie in [0, 1], got {alpha}");
    }
    if x1.len() != x2.len() || y1.len() != y2.len() {
        bail!(Input, "mixup operands have mismatched dimensions");
    }
    let beta = T::one() - alpha;
    let x = &x1 * alpha + &x2 * beta;
    let y = &y1 * alpha + &y2 * beta;
    Ok((x, y))
}

/// Keeps `subset_size` base samples and gives each `views_per_sample`
/// held-out samples of the same true cluster as its "augmentations".
///
/// The returned dataset is the base subset. The returned augmentation is a
/// label-preserving [`ViewSet`] with `views_per_sample + 1` entries per
/// sample: the base plus its resampled partners.
pub fn iid_augment<T: Scalar>(
    ds: &LabeledDataset<T>,
    subset_size: usize,
    views_per_sample: usize,
    seed: u64,
) -> Result<(LabeledDataset<T>, AugmentationSpec<T>)> {
    let n = ds.len();
    if subset_size == 0 || subset_size * (views_per_sample + 1) > n {
        bail!(
            Data,
            "subset of {subset_size} with {views_per_sample} views needs {} samples, have {n}",
            subset_size * (views_per_sample + 1)
        );
    }
    let mut rng = rng_at(seed, &[stream::IID_POOL]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (base_idx, rest) = order.split_at(subset_size);
    let clusters = ds.true_cluster.iter().copied().max().map_or(0, |m| m + 1);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); clusters];
    for &i in rest {
        pools[ds.true_cluster[i]].push(i);
    }

    let per_sample = views_per_sample + 1;
    let d = ds.dim();
    let mut views = Array2::zeros((subset_size * per_sample, d));
    let mut labels = Vec::with_capacity(subset_size * per_sample);
    for (s, &i) in base_idx.iter().enumerate() {
        let pool = &mut pools[ds.true_cluster[i]];
        if pool.len() < views_per_sample {
            bail!(
                Data,
                "cluster {} has only {} reserve samples, need {views_per_sample}",
                ds.true_cluster[i],
                pool.len()
            );
        }
        let take = pool.split_off(pool.len() - views_per_sample);
        views.row_mut(s * per_sample).assign(&ds.inputs.row(i));
        for (a, &j) in take.iter().enumerate() {
            views.row_mut(s * per_sample + a + 1).assign(&ds.inputs.row(j));
        }
        labels.extend(std::iter::repeat_n(ds.random_labels[i], per_sample));
    }
    let base = ds.select(base_idx);
    let spec = AugmentationSpec::Materialized(ViewSet {
        views,
        labels,
        num_classes: ds.num_random_classes,
        per_sample,
        policy: LabelPolicy::Preserve,
    });
    Ok((base, spec))
}

/// Draws and freezes `views` views per sample from a generative spec.
///
/// View 0 is the unaugmented input. Under [`LabelPolicy::Randomize`] every
/// other view gets a fresh label drawn uniformly from the dataset's random
/// label space.
pub fn materialize_augmentations<T: Scalar>(
    ds: &LabeledDataset<T>,
    spec: &AugmentationSpec<T>,
    views: usize,
    policy: LabelPolicy,
    seed: u64,
) -> Result<AugmentationSpec<T>> {
    let AugmentationSpec::SubspaceNoise { d1, strength } = *spec else {
        bail!(Config, "only subspace-noise augmentations can be materialized, got {}", spec.kind_name());
    };
    if views == 0 {
        bail!(Config, "need at least one view per sample");
    }
    let n = ds.len();
    let mut out = Array2::zeros((n * views, ds.dim()));
    for (k, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        row.assign(&ds.inputs.row(k / views));
    }
    let mut labels = Vec::with_capacity(n * views);
    for i in 0..n {
        labels.push(ds.random_labels[i]);
        for a in 1..views {
            let mut rng = rng_at(seed, &[stream::MATERIALIZE, i as u64, a as u64]);
            let mut row = out.row_mut(i * views + a);
            add_subspace_noise(row.as_slice_mut().unwrap(), d1, strength, &mut rng);
            labels.push(match policy {
                LabelPolicy::Preserve => ds.random_labels[i],
                LabelPolicy::Randomize => {
                    rng_at(seed, &[stream::VIEW_LABELS, i as u64, a as u64]).random_range(0..ds.num_random_classes)
                }
            });
        }
    }
    Ok(AugmentationSpec::Materialized(ViewSet {
        views: out,
        labels,
        num_classes: ds.num_random_classes,
        per_sample: views,
        policy,
    }))
}
