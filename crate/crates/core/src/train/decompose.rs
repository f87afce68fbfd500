//! Split of the augmented MSE loss into a view-dispersion term and a bias
//! term.
//!
//! For `n` samples with `B` views each and per-sample targets `y_i`:
//!
//! ```text
//! L_super = 1/(nB)   sum_i sum_a      |f(T_a x_i) - y_i|^2
//! Inv     = 1/(2nB^2) sum_i sum_{a,b} |f(T_a x_i) - f(T_b x_i)|^2
//! Bias    = 1/n      sum_i            |y_i - mean_a f(T_a x_i)|^2
//! ```
//!
//! and `L_super = Inv + Bias` holds exactly. The per-sample identity behind
//! it is [`mean_deviation_identity`].

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView2};
use num_traits::Num;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::model::Model;
use crate::scalar::{sq_dist, Scalar};
use crate::synthdata::{onehot, LabeledDataset, ViewSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport<T> {
    pub l_super: T,
    pub inv_term: T,
    pub bias_term: T,
    /// `l_super - (inv_term + bias_term)`.
    pub residual: T,
    /// Contribution of each label class `c` to the bias, summed over the
    /// samples whose target is `e_c` and divided by `n`.
    pub per_class_bias: BTreeMap<usize, T>,
}

/// Both sides of `1/B sum |x_i - a|^2 = 1/(2B^2) sum_{i,j} |x_i - x_j|^2 + |a - mean(x)|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck<T> {
    pub lhs: T,
    pub rhs: T,
    pub residual: T,
}

fn sq_dist_num<T: Num + Clone>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| {
        let d = x.clone() - y.clone();
        acc + d.clone() * d
    })
}

fn count<T: Num + Clone>(k: usize) -> T {
    (0..k).fold(T::zero(), |acc, _| acc + T::one())
}

/// Evaluates both sides of the mean-deviation identity for `B` vectors and
/// an anchor `a`. Works over any field, including exact rationals.
pub fn mean_deviation_identity<T: Num + Clone>(xs: &[Vec<T>], a: &[T]) -> Result<IdentityCheck<T>> {
    if xs.is_empty() {
        bail!(Input, "need at least one vector");
    }
    if xs.iter().any(|x| x.len() != a.len()) {
        bail!(Input, "all vectors must match the anchor dimension {}", a.len());
    }
    let b: T = count(xs.len());
    let lhs = xs.iter().fold(T::zero(), |acc, x| acc + sq_dist_num(x, a)) / b.clone();
    let mut pairwise = T::zero();
    for x in xs {
        for y in xs {
            pairwise = pairwise + sq_dist_num(x, y);
        }
    }
    let two: T = count(2);
    let pairwise = pairwise / (two * b.clone() * b.clone());
    let mean: Vec<T> =
        (0..a.len()).map(|j| xs.iter().fold(T::zero(), |acc, x| acc + x[j].clone()) / b.clone()).collect();
    let rhs = pairwise + sq_dist_num(a, &mean);
    let residual = lhs.clone() - rhs.clone();
    Ok(IdentityCheck { lhs, rhs, residual })
}

/// Decomposition from precomputed outputs.
///
/// `outputs` holds `B` consecutive rows per sample (sample-major), `targets`
/// one row per sample, and `labels` the class index of each target for the
/// per-class grouping.
pub fn decompose_outputs<T: Scalar>(
    outputs: ArrayView2<'_, T>,
    per_sample: usize,
    targets: ArrayView2<'_, T>,
    labels: &[usize],
) -> Result<DecompositionReport<T>> {
    let n = targets.nrows();
    if per_sample == 0 || n == 0 {
        bail!(Input, "need at least one sample and one view");
    }
    if outputs.nrows() != n * per_sample || outputs.ncols() != targets.ncols() || labels.len() != n {
        bail!(Input, "outputs, targets and labels have inconsistent shapes");
    }
    let outputs = outputs.as_standard_layout();
    let targets = targets.as_standard_layout();
    let c = targets.ncols();
    let b = T::of(per_sample as f64);
    let (mut l_super, mut inv, mut bias) = (T::zero(), T::zero(), T::zero());
    let mut per_class = BTreeMap::new();
    let mut mean = Array1::zeros(c);
    for i in 0..n {
        let y = targets.row(i);
        let y = y.as_slice().unwrap();
        let rows: Vec<&[T]> = (0..per_sample).map(|a| outputs.row(i * per_sample + a).to_slice().unwrap()).collect();
        mean.fill(T::zero());
        for r in &rows {
            l_super += sq_dist(r, y);
            for (m, &v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.mapv_inplace(|v| v / b);
        for r in &rows {
            for s in &rows {
                inv += sq_dist(r, s);
            }
        }
        let bi = sq_dist(y, mean.as_slice().unwrap());
        bias += bi;
        *per_class.entry(labels[i]).or_insert(T::zero()) += bi;
    }
    let nt = T::of(n as f64);
    let l_super = l_super / (nt * b);
    let inv_term = inv / (T::of(2.0) * nt * b * b);
    let bias_term = bias / nt;
    for v in per_class.values_mut() {
        *v /= nt;
    }
    Ok(DecompositionReport {
        l_super,
        inv_term,
        bias_term,
        residual: l_super - (inv_term + bias_term),
        per_class_bias: per_class,
    })
}

/// Decomposes the augmented loss of `model` over frozen `views`, using the
/// base samples' random labels as targets.
pub fn loss_decompose<T: Scalar>(
    model: &Model<T>,
    base: &LabeledDataset<T>,
    views: &ViewSet<T>,
) -> Result<DecompositionReport<T>> {
    if views.num_samples() != base.len() {
        bail!(Input, "{} view groups for {} samples", views.num_samples(), base.len());
    }
    let outputs = model.predict(views.views.view())?;
    let targets = onehot::<T>(&base.random_labels, base.num_random_classes);
    decompose_outputs(outputs.view(), views.per_sample, targets.view(), &base.random_labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasLimitReport {
    pub bias: f64,
    pub tolerance: f64,
    /// False when `bias > tolerance`, in which case nothing is asserted.
    pub applicable: bool,
    /// Largest `| |fbar_i - fbar_j|^2 - 2 |` over pairs.
    pub max_deviation: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Checks that view-averaged outputs are pairwise at squared distance 2 once
/// the bias of a per-sample labeling has vanished.
pub fn pairwise_limit_check<T: Scalar>(averages: ArrayView2<'_, T>, bias: f64, tolerance: f64) -> BiasLimitReport {
    let averages = averages.as_standard_layout();
    let rows: Vec<&[T]> = averages.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
    let mut max_dev = 0.0f64;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let dev = (sq_dist(rows[i], rows[j]).as_f64() - 2.0).abs();
            max_dev = max_dev.max(dev);
        }
    }
    let applicable = bias <= tolerance;
    let bound = 10.0 * tolerance.sqrt();
    BiasLimitReport {
        bias,
        tolerance,
        applicable,
        max_deviation: max_dev,
        bound,
        passed: !applicable || max_dev <= bound,
    }
}

/// [`pairwise_limit_check`] on a model whose base samples carry per-sample
/// labels (`C' = n`).
pub fn bias_limit_check<T: Scalar>(
    model: &Model<T>,
    base: &LabeledDataset<T>,
    views: &ViewSet<T>,
    tolerance: f64,
) -> Result<BiasLimitReport> {
    if base.num_random_classes != base.len() {
        bail!(Input, "bias limit check needs per-sample labels (C' = n)");
    }
    let report = loss_decompose(model, base, views)?;
    let outputs = model.predict(views.views.view())?;
    let b = views.per_sample;
    let averages = ndarray::Array2::from_shape_fn((base.len(), outputs.ncols()), |(i, c)| {
        (0..b).map(|a| outputs[[i * b + a, c]]).sum::<T>() / T::of(b as f64)
    });
    Ok(pairwise_limit_check(averages.view(), report.bias_term.as_f64(), tolerance))
}
