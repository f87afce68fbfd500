use std::cmp::Ordering;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::model::Model;
use crate::scalar::{sq_dist, Scalar};
use crate::synthdata::LabeledDataset;

/// Default neighbor count.
pub const DEFAULT_K: usize = 20;

/// Which labels a probe fits and scores against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Clean,
    Random,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Clean => "clean",
            LabelSource::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub k: usize,
    pub layer: String,
    pub label_source: LabelSource,
    pub n_fit: usize,
    pub n_eval: usize,
}

/// `k` clamped to `fit / 5` (at least 1) for fit sets below 100 points.
pub fn effective_k(k: usize, n_fit: usize) -> usize {
    if n_fit < 100 {
        k.min((n_fit / 5).max(1))
    } else {
        k
    }
}

fn vote(labels: impl Iterator<Item = usize>) -> usize {
    let mut counts: Vec<usize> = Vec::new();
    for l in labels {
        if l >= counts.len() {
            counts.resize(l + 1, 0);
        }
        counts[l] += 1;
    }
    // First maximum, so ties go to the lower class.
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    best
}

/// Prediction for one query with an optionally excluded fit index.
fn predict_one<T: Scalar>(
    fit: &[&[T]],
    labels: &[usize],
    query: &[T],
    k: usize,
    exclude: Option<usize>,
    scratch: &mut Vec<(T, usize)>,
) -> usize {
    scratch.clear();
    scratch.extend(fit.iter().enumerate().filter(|&(j, _)| Some(j) != exclude).map(|(j, p)| (sq_dist(p, query), j)));
    let order = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
    if k < scratch.len() {
        scratch.select_nth_unstable_by(k - 1, order);
    }
    vote(scratch[..k].iter().map(|&(_, j)| labels[j]))
}

fn rows<'a, T: Scalar>(m: &'a ArrayView2<'_, T>) -> Vec<&'a [T]> {
    m.rows().into_iter().map(|r| r.to_slice().expect("standard layout")).collect()
}

fn check_fit<T>(fit: &ArrayView2<'_, T>, labels: &[usize], k: usize, usable: usize) -> Result<()> {
    if fit.nrows() == 0 {
        bail!(Input, "K-NN needs a non-empty fit set");
    }
    if labels.len() != fit.nrows() {
        bail!(Input, "{} labels for {} fit points", labels.len(), fit.nrows());
    }
    if k == 0 || k > usable {
        bail!(Input, "k = {k} must lie in 1..={usable}");
    }
    Ok(())
}

/// Majority label among the `k` nearest fit points (Euclidean).
///
/// Equal distances rank the lower fit index first; equal vote counts pick the
/// lower class.
pub fn knn_predict<T: Scalar>(
    fit_points: ArrayView2<'_, T>,
    fit_labels: &[usize],
    query: ArrayView1<'_, T>,
    k: usize,
) -> Result<usize> {
    check_fit(&fit_points, fit_labels, k, fit_points.nrows())?;
    if query.len() != fit_points.ncols() {
        bail!(Input, "query has dimension {}, fit points {}", query.len(), fit_points.ncols());
    }
    let fit = fit_points.as_standard_layout();
    let fit_view = fit.view();
    let query = query.as_standard_layout();
    Ok(predict_one(&rows(&fit_view), fit_labels, query.as_slice().unwrap(), k, None, &mut Vec::new()))
}

/// Predictions for every query row. With `leave_one_out`, query `i` is fit
/// point `i` and is excluded from its own neighbor set.
pub fn knn_predict_batch<T: Scalar>(
    fit_points: ArrayView2<'_, T>,
    fit_labels: &[usize],
    queries: ArrayView2<'_, T>,
    k: usize,
    leave_one_out: bool,
) -> Result<Vec<usize>> {
    let usable = fit_points.nrows() - usize::from(leave_one_out && fit_points.nrows() > 0);
    check_fit(&fit_points, fit_labels, k, usable)?;
    if queries.ncols() != fit_points.ncols() {
        bail!(Input, "queries have dimension {}, fit points {}", queries.ncols(), fit_points.ncols());
    }
    if leave_one_out && queries.nrows() != fit_points.nrows() {
        bail!(Input, "leave-one-out needs the queries to be the fit points");
    }
    let fit = fit_points.as_standard_layout();
    let fit_view = fit.view();
    let fit_rows = rows(&fit_view);
    let queries = queries.as_standard_layout();
    let mut scratch = Vec::with_capacity(fit_rows.len());
    Ok(queries
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, q)| {
            predict_one(&fit_rows, fit_labels, q.as_slice().unwrap(), k, leave_one_out.then_some(i), &mut scratch)
        })
        .collect())
}

fn share_correct(pred: &[usize], truth: &[usize]) -> f64 {
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    correct as f64 / truth.len() as f64
}

fn layer_index<T: Scalar>(model: &Model<T>, layer: &str) -> Result<usize> {
    model
        .layer_names()
        .iter()
        .position(|n| n == layer)
        .ok_or_else(|| crate::Error::Input(format!("model has no layer named {layer:?}")))
}

/// Scores precomputed features.
///
/// Clean probing fits the fit set's clean labels and scores the eval set's
/// clean labels. Random probing fits and scores the fit set's random labels,
/// leaving each point out of its own vote; `eval` is ignored.
#[allow(clippy::too_many_arguments)]
pub fn probe_features<T: Scalar>(
    fit_features: ArrayView2<'_, T>,
    fit: &LabeledDataset<T>,
    eval_features: ArrayView2<'_, T>,
    eval: &LabeledDataset<T>,
    k: usize,
    label_source: LabelSource,
    layer: &str,
) -> Result<ProbeResult> {
    let (accuracy, n_eval) = match label_source {
        LabelSource::Clean => {
            if eval.is_empty() {
                bail!(Input, "empty evaluation set");
            }
            let pred = knn_predict_batch(fit_features, &fit.clean_labels, eval_features, k, false)?;
            (share_correct(&pred, &eval.clean_labels), eval.len())
        }
        LabelSource::Random => {
            let pred = knn_predict_batch(fit_features, &fit.random_labels, fit_features, k, true)?;
            (share_correct(&pred, &fit.random_labels), fit.len())
        }
    };
    Ok(ProbeResult { accuracy, k, layer: layer.to_string(), label_source, n_fit: fit.len(), n_eval })
}

/// K-NN probe of one named layer on unaugmented inputs.
pub fn knn_probe<T: Scalar>(
    model: &Model<T>,
    fit: &LabeledDataset<T>,
    eval: &LabeledDataset<T>,
    k: usize,
    label_source: LabelSource,
    layer: &str,
) -> Result<ProbeResult> {
    let idx = layer_index(model, layer)?;
    let fit_f = model.forward_layers(fit.inputs.view())?.swap_remove(idx);
    let eval_f = match label_source {
        LabelSource::Clean => model.forward_layers(eval.inputs.view())?.swap_remove(idx),
        LabelSource::Random => fit_f.clone(),
    };
    probe_features(fit_f.view(), fit, eval_f.view(), eval, k, label_source, layer)
}

/// Clean and random probes at every layer boundary, input to output.
pub fn probe_layers<T: Scalar>(
    model: &Model<T>,
    fit: &LabeledDataset<T>,
    eval: &LabeledDataset<T>,
    k: usize,
) -> Result<Vec<(ProbeResult, ProbeResult)>> {
    let fit_layers = model.forward_layers(fit.inputs.view())?;
    let eval_layers = model.forward_layers(eval.inputs.view())?;
    model
        .layer_names()
        .iter()
        .zip(fit_layers.iter().zip(&eval_layers))
        .map(|(name, (f, e))| {
            Ok((
                probe_features(f.view(), fit, e.view(), eval, k, LabelSource::Clean, name)?,
                probe_features(f.view(), fit, e.view(), eval, k, LabelSource::Random, name)?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_at;
    use ndarray::{array, Array1, Array2};
    use rand::Rng as _;

    /// Full sort by (distance, index) and a plain count; nothing shared with
    /// the selection-based implementation.
    fn brute(fit: &Array2<f64>, labels: &[usize], q: &Array1<f64>, k: usize) -> usize {
        let mut d: Vec<(f64, usize)> = (0..fit.nrows()).map(|j| ((&fit.row(j) - q).mapv(|v| v * v).sum(), j)).collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let c = labels.iter().max().unwrap() + 1;
        let mut counts = vec![0; c];
        for &(_, j) in &d[..k] {
            counts[labels[j]] += 1;
        }
        let top = *counts.iter().max().unwrap();
        counts.iter().position(|&v| v == top).unwrap()
    }

    #[test]
    fn exact_match_returns_its_label() {
        let fit = array![[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]];
        assert_eq!(knn_predict(fit.view(), &[4, 1, 2], fit.row(1), 1).unwrap(), 1);
    }

    #[test]
    fn small_two_cluster_example() {
        let fit = array![[0.0, 0.0], [0.0, 1.0], [5.0, 5.0], [5.0, 6.0], [5.0, 4.0], [0.0, 2.0]];
        let labels = [0, 0, 1, 1, 1, 0];
        assert_eq!(knn_predict(fit.view(), &labels, array![4.0, 4.0].view(), 3).unwrap(), 1);
    }

    #[test]
    fn full_vote_is_global_majority() {
        let fit = Array2::<f64>::from_shape_fn((7, 2), |(i, j)| (i * 3 + j) as f64);
        let labels = [2, 0, 2, 1, 0, 2, 1];
        assert_eq!(knn_predict(fit.view(), &labels, array![100.0, -3.0].view(), 7).unwrap(), 2);
        // A 2-2 split goes to the lower class.
        let four = fit.slice(ndarray::s![..4, ..]);
        assert_eq!(knn_predict(four, &[1, 1, 0, 0], four.row(0), 4).unwrap(), 0);
    }

    #[test]
    fn distance_ties_prefer_the_lower_index() {
        // Both points are at distance 1 from the query.
        let fit = array![[1.0], [-1.0]];
        assert_eq!(knn_predict(fit.view(), &[3, 5], array![0.0].view(), 1).unwrap(), 3);
        assert_eq!(knn_predict(fit.view(), &[5, 3], array![0.0].view(), 1).unwrap(), 5);
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut rng = rng_at(4, &[]);
        for _ in 0..60 {
            let n = rng.random_range(1..120);
            let dim = rng.random_range(1..4);
            // Integer grid coordinates make equal distances common.
            let fit = Array2::from_shape_fn((n, dim), |_| rng.random_range(-3..4) as f64);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            for k in [1, 3, 20] {
                if k > n {
                    continue;
                }
                for _ in 0..5 {
                    let q = Array1::from_shape_fn(dim, |_| rng.random_range(-3..4) as f64);
                    assert_eq!(knn_predict(fit.view(), &labels, q.view(), k).unwrap(), brute(&fit, &labels, &q, k));
                }
            }
        }
    }

    #[test]
    fn leave_one_out_skips_self() {
        let fit = array![[0.0], [1.0], [3.0], [10.0]];
        let labels = [0, 1, 1, 0];
        let pred = knn_predict_batch(fit.view(), &labels, fit.view(), 1, true).unwrap();
        assert_eq!(pred, vec![1, 0, 1, 1]);
        assert!(knn_predict_batch(fit.view(), &labels, fit.view(), 4, true).is_err());
    }

    #[test]
    fn errors_on_bad_inputs() {
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(knn_predict(empty.view(), &[], array![0.0, 0.0].view(), 1).is_err());
        let fit = array![[0.0, 1.0]];
        assert!(knn_predict(fit.view(), &[0], array![0.0, 0.0].view(), 2).is_err());
        assert!(knn_predict(fit.view(), &[0], array![0.0].view(), 1).is_err());
    }

    #[test]
    fn clamps_k_for_small_fit_sets() {
        assert_eq!(effective_k(20, 50), 10);
        assert_eq!(effective_k(20, 3), 1);
        assert_eq!(effective_k(20, 100), 20);
    }
}
