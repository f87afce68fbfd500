//! Randomized property suites for the exact identities, the analytic
//! gradients and the K-NN classifier. They need no training and back the
//! `check` subcommand.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{grad_check, init_params, Activation, EncoderSpec, Model, ModelSpec, ProjectorSpec};
use crate::probe::knn_predict;
use crate::rng::{rng_at, Rng};
use crate::synthdata::{onehot, LabelPolicy, LabeledDataset, ViewSet};
use crate::train::{loss_decompose, mean_deviation_identity, mse_loss};

/// Outcome of one randomized suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    /// Largest normalized error over all instances.
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self { name: name.into(), instances: 0, failures: 0, max_error: 0.0, tolerance, passed: true }
    }

    fn record(&mut self, error: f64, ok: bool) {
        self.instances += 1;
        self.max_error = self.max_error.max(error);
        if !ok || !error.is_finite() {
            self.failures += 1;
            self.passed = false;
        }
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Mean-deviation identity on random vector sets (`B <= 10`, dimension
/// `<= 16`), relative tolerance `1e-10 * (1 + lhs)`.
pub fn lemma_suite(instances: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new("mean_deviation_identity", 1e-10);
    for t in 0..instances {
        let mut rng = rng_at(seed, &[t as u64]);
        let b = rng.random_range(1..=10);
        let dim = rng.random_range(1..=16);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let xs: Vec<Vec<f64>> = (0..b).map(|_| (0..dim).map(|_| scale * gaussian(&mut rng)).collect()).collect();
        let a: Vec<f64> = (0..dim).map(|_| scale * gaussian(&mut rng)).collect();
        let check = mean_deviation_identity(&xs, &a).expect("well-formed instance");
        let err = check.residual.abs() / (1.0 + check.lhs);
        report.record(err, err <= report.tolerance);
    }
    report
}

fn random_spec(rng: &mut Rng, c: usize) -> ModelSpec {
    match rng.random_range(0..3) {
        0 => ModelSpec {
            projector: ProjectorSpec::InverseDistance { patterns: rng.random_range(2..=12) },
            ..Default::default()
        },
        1 => ModelSpec {
            encoder: EncoderSpec::Mlp { hidden: vec![rng.random_range(2..=8)], activation: Activation::Tanh },
            projector: ProjectorSpec::Mlp { hidden: vec![rng.random_range(2..=8)], activation: Activation::Relu },
            embed_dim: Some(rng.random_range(2..=6)),
            ..Default::default()
        },
        _ => ModelSpec { projector: ProjectorSpec::Identity, embed_dim: Some(c), ..Default::default() },
    }
}

/// Decomposition of the augmented loss into invariance and bias terms on
/// random models, datasets and frozen view sets (`B <= 5`). The supervised
/// loss is also recomputed independently as a plain MSE over all views.
pub fn decomposition_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("loss_decomposition", 1e-10);
    for t in 0..instances {
        let mut rng = rng_at(seed, &[t as u64]);
        let n = rng.random_range(1..=12);
        let d = rng.random_range(2..=8);
        let c = rng.random_range(1..=6);
        let b = rng.random_range(1..=5);
        let model: Model<f64> = init_params(&random_spec(&mut rng, c), d, c, rng.random())?;
        let inputs = Array2::from_shape_fn((n, d), |_| gaussian(&mut rng));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let views = Array2::from_shape_fn((n * b, d), |(r, j)| inputs[[r / b, j]] + 0.5 * gaussian(&mut rng));
        let base = LabeledDataset {
            inputs,
            d1: 1,
            clean_labels: labels.clone(),
            num_classes: c,
            random_labels: labels.clone(),
            num_random_classes: c,
            true_cluster: labels.clone(),
            cluster_means: Array2::zeros((0, 0)),
            sigma: 1.0,
            seed: 0,
        };
        let expanded: Vec<usize> = labels.iter().flat_map(|&l| std::iter::repeat_n(l, b)).collect();
        let set =
            ViewSet { views, labels: expanded.clone(), num_classes: c, per_sample: b, policy: LabelPolicy::Preserve };
        let rep = loss_decompose(&model, &base, &set)?;
        let direct = mse_loss(model.predict(set.views.view())?.view(), onehot::<f64>(&expanded, c).view())?;
        let scale = 1.0 + rep.l_super;
        let err = (rep.residual.abs() / scale).max((rep.l_super - direct).abs() / scale);
        report.record(err, err <= report.tolerance && rep.inv_term >= 0.0 && rep.bias_term >= 0.0);
    }
    Ok(report)
}

/// The three model families checked by [`gradient_suite`].
pub fn gradient_specs() -> Vec<(&'static str, ModelSpec)> {
    vec![
        ("linear", ModelSpec { projector: ProjectorSpec::Identity, ..Default::default() }),
        (
            "inverse_distance",
            ModelSpec { projector: ProjectorSpec::InverseDistance { patterns: 8 }, ..Default::default() },
        ),
        (
            "mlp",
            ModelSpec {
                encoder: EncoderSpec::Mlp { hidden: vec![6], activation: Activation::Relu },
                projector: ProjectorSpec::Identity,
                ..Default::default()
            },
        ),
    ]
}

/// Analytic gradients against central differences (step `1e-5`, relative
/// tolerance `1e-4`) for every model family, `instances` draws each.
pub fn gradient_suite(instances: usize, seed: u64) -> Result<Vec<SuiteReport>> {
    let mut out = Vec::new();
    for (s, (name, spec)) in gradient_specs().into_iter().enumerate() {
        let mut report = SuiteReport::new(&format!("gradient_{name}"), 1e-4);
        for t in 0..instances {
            let mut rng = rng_at(seed, &[s as u64, t as u64]);
            let d = rng.random_range(2..=6);
            // The identity projector needs the embedding width to match C.
            let c = d;
            let m: Model<f64> = init_params(&spec, d, c, rng.random())?;
            let x = Array1::from_shape_fn(d, |_| gaussian(&mut rng));
            let mut y = Array1::zeros(c);
            y[rng.random_range(0..c)] = 1.0;
            let r = grad_check(&m, x.view(), y.view(), 1e-5, 1e-4)?;
            report.record(r.max_error, r.passed);
        }
        out.push(report);
    }
    Ok(out)
}

/// Reference K-NN: sorts every fit point by `(distance, index)` and takes
/// the most common label among the first `k`, lowest class on ties.
pub fn brute_force_knn(fit: &Array2<f64>, labels: &[usize], query: &[f64], k: usize) -> usize {
    let mut ranked: Vec<(f64, usize)> = fit
        .rows()
        .into_iter()
        .enumerate()
        .map(|(j, p)| (p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), j))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    for &(_, j) in &ranked[..k] {
        counts[labels[j]] += 1;
    }
    let top = *counts.iter().max().unwrap();
    counts.iter().position(|&v| v == top).unwrap()
}

/// `knn_predict` against [`brute_force_knn`] on random instances (up to 500
/// fit points, 50 queries, `k` in {1, 3, 20}). Every other instance lives
/// on a small integer grid so that distance and vote ties are frequent.
pub fn knn_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("knn_oracle", 0.0);
    for t in 0..instances {
        let mut rng = rng_at(seed, &[t as u64]);
        let k = [1, 3, 20][t % 3];
        let n_fit = rng.random_range(k..=500);
        let n_query = rng.random_range(1..=50);
        let dim = rng.random_range(1..=4);
        let classes = rng.random_range(2..=5);
        let tied = t % 2 == 0;
        let draw = |rng: &mut Rng| if tied { rng.random_range(0..3) as f64 } else { gaussian(rng) };
        let fit = Array2::from_shape_fn((n_fit, dim), |_| draw(&mut rng));
        let labels: Vec<usize> = (0..n_fit).map(|_| rng.random_range(0..classes)).collect();
        let queries = Array2::from_shape_fn((n_query, dim), |_| draw(&mut rng));
        let mismatches = queries
            .rows()
            .into_iter()
            .map(|q| -> Result<bool> {
                let got = knn_predict(fit.view(), &labels, q, k)?;
                Ok(got != brute_force_knn(&fit, &labels, q.as_slice().unwrap(), k))
            })
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .filter(|&m| m)
            .count();
        report.record(mismatches as f64, mismatches == 0);
    }
    Ok(report)
}

/// Every suite at its default size.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    let mut out = vec![lemma_suite(1000, seed), decomposition_suite(200, seed)?];
    out.extend(gradient_suite(50, seed)?);
    out.push(knn_suite(100, seed)?);
    Ok(out)
}
