use std::time::Instant;

use ndarray::{s, ArrayView2};
use serde::{Deserialize, Serialize};

use super::config::{AugConfig, LabelClasses, RunConfig};
use crate::error::Result;
use crate::model::{init_params, Model};
use crate::probe::{
    classify_memorization, effective_k, knn_probe, normalized_invariance, probe_layers, InvarianceEstimate,
    LabelSource, MemorizationVerdict, ProbeResult,
};
use crate::rng::{derive, stream};
use crate::synthdata::{
    generate_toy_split, iid_augment, materialize_augmentations, randomize_labels, AugmentationSpec, LabelPolicy,
    LabelSpace, LabeledDataset, ViewSet,
};
use crate::train::{
    accuracy, loss_decompose, train_run, DecompositionReport, EpochMetrics, TrainCallback, TrainHistory,
};

/// Name of the layer probed for verdicts.
pub const EMBEDDING_LAYER: &str = "embedding";

/// Independent sub-seeds of one run.
mod sub {
    pub const DATA: u64 = 0;
    pub const LABELS: u64 = 1;
    pub const INIT: u64 = 2;
    pub const VIEWS: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const INVARIANCE: u64 = 5;
    pub const DECOMPOSE: u64 = 6;
}

fn sub_seed(seed: u64, which: u64) -> u64 {
    derive(seed, &[stream::RUN, which])
}

/// Clean and random probes of one layer after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProbe {
    pub layer: String,
    pub clean: ProbeResult,
    pub random: ProbeResult,
}

/// Everything measured for one `(config, seed)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// Swept parameter, or `"single"` for standalone runs.
    pub axis: String,
    pub value: String,
    /// Sub-configuration within a sweep point, such as a label policy.
    pub arm: Option<String>,
    pub seed: u64,
    pub config: RunConfig,
    /// Training samples actually used (the subset size for i.i.d. runs).
    pub n_train: usize,
    /// Size of the randomized label space.
    pub c_prime: usize,
    pub history: TrainHistory,
    pub train_acc: f64,
    pub memorized: bool,
    pub probe_init: ProbeResult,
    pub probe_final: ProbeResult,
    pub invariance_init: Option<InvarianceEstimate>,
    pub invariance_final: Option<InvarianceEstimate>,
    pub decomposition_final: DecompositionReport<f64>,
    /// Per-layer probes, when requested by the config.
    pub layers: Vec<LayerProbe>,
    pub verdict: MemorizationVerdict,
    pub failed: bool,
    pub wall_time_s: Option<f64>,
}

impl RunRecord {
    /// Recomputes the verdict from the stored accuracies.
    pub fn verdict_is_consistent(&self) -> bool {
        let v = classify_memorization(
            self.train_acc,
            self.probe_init.accuracy,
            self.probe_final.accuracy,
            self.config.probe.margin,
        );
        v == self.verdict
    }

    pub fn inv_init(&self) -> Option<f64> {
        self.invariance_init.as_ref().map(|e| e.mean_i)
    }

    pub fn inv_final(&self) -> Option<f64> {
        self.invariance_final.as_ref().map(|e| e.mean_i)
    }
}

/// Data, labels and training augmentation of a run, ready for training.
pub struct Prepared {
    pub train: LabeledDataset<f64>,
    pub test: LabeledDataset<f64>,
    pub aug: AugmentationSpec<f64>,
}

/// Draws the data, randomizes labels and realizes the augmentation.
pub fn prepare(config: &RunConfig, seed: u64) -> Result<Prepared> {
    config.validate()?;
    let toy = config.data.toy(sub_seed(seed, sub::DATA));
    let (train, test) = generate_toy_split::<f64>(&toy, config.data.n_test)?;
    let space = match config.labels.classes {
        LabelClasses::Count(c) => LabelSpace::Classes(c),
        LabelClasses::Named(_) => LabelSpace::PerSample,
    };
    let view_seed = sub_seed(seed, sub::VIEWS);
    let noise = |strength: f64| AugmentationSpec::SubspaceNoise { d1: toy.d1, strength: strength * toy.sigma };
    let (train, aug) = match &config.augmentation {
        AugConfig::Iid { subset_size, views_per_sample } => {
            // Labels are randomized on the subset so that `C' = n` refers to
            // the samples actually trained on; every view inherits its
            // sample's label.
            let (base, spec) = iid_augment(&train, *subset_size, *views_per_sample, view_seed)?;
            let base = randomize_labels(&base, space, config.labels.noise_fraction, sub_seed(seed, sub::LABELS))?;
            let AugmentationSpec::Materialized(mut views) = spec else { unreachable!() };
            let per = views.per_sample;
            views.labels = base.random_labels.iter().flat_map(|&l| std::iter::repeat_n(l, per)).collect();
            views.num_classes = base.num_random_classes;
            (base, AugmentationSpec::Materialized(views))
        }
        other => {
            let train = randomize_labels(&train, space, config.labels.noise_fraction, sub_seed(seed, sub::LABELS))?;
            let aug = match other {
                AugConfig::None => AugmentationSpec::None,
                AugConfig::SubspaceNoise { strength, views: None, .. } => noise(*strength),
                AugConfig::SubspaceNoise { strength, views: Some(b), policy } => {
                    materialize_augmentations(&train, &noise(*strength), *b, *policy, view_seed)?
                }
                AugConfig::Mixup { alpha } => AugmentationSpec::Mixup { alpha: *alpha },
                AugConfig::Iid { .. } => unreachable!(),
            };
            (train, aug)
        }
    };
    Ok(Prepared { train, test, aug })
}

/// Measures clean probing and invariance during training.
struct Monitor<'a> {
    every: usize,
    k: usize,
    train: &'a LabeledDataset<f64>,
    test: &'a LabeledDataset<f64>,
    inv_points: ArrayView2<'a, f64>,
    inv_aug: AugmentationSpec<f64>,
    config: &'a RunConfig,
    seed: u64,
}

impl Monitor<'_> {
    fn probe(&self, model: &Model<f64>) -> Result<ProbeResult> {
        knn_probe(model, self.train, self.test, self.k, LabelSource::Clean, EMBEDDING_LAYER)
    }

    fn invariance(&self, model: &Model<f64>) -> Option<InvarianceEstimate> {
        let p = &self.config.probe;
        match normalized_invariance(model, self.inv_points, &self.inv_aug, p.aug_pairs, p.cross_pairs, self.seed) {
            Ok(est) => Some(est),
            Err(e) => {
                log::warn!("invariance undefined: {e}");
                None
            }
        }
    }
}

impl TrainCallback<f64> for Monitor<'_> {
    fn every(&self) -> usize {
        self.every
    }

    fn on_epoch(&mut self, _epoch: usize, model: &Model<f64>) -> Result<EpochMetrics> {
        Ok(EpochMetrics {
            probe_acc: Some(self.probe(model)?.accuracy),
            invariance: self.invariance(model).map(|e| e.mean_i),
        })
    }
}

/// Frozen views used for the final loss decomposition: the training views
/// when they were materialized, otherwise fresh label-preserving draws of
/// the training augmentation (only the base view for augmentations that
/// cannot be frozen).
fn decomposition_views(prep: &Prepared, config: &RunConfig, seed: u64) -> Result<ViewSet<f64>> {
    let b = config.probe.decompose_views;
    match &prep.aug {
        AugmentationSpec::Materialized(v) => Ok(v.clone()),
        spec @ AugmentationSpec::SubspaceNoise { .. } => {
            match materialize_augmentations(&prep.train, spec, b, LabelPolicy::Preserve, seed)? {
                AugmentationSpec::Materialized(v) => Ok(v),
                _ => unreachable!(),
            }
        }
        _ => Ok(ViewSet {
            views: prep.train.inputs.clone(),
            labels: prep.train.random_labels.clone(),
            num_classes: prep.train.num_random_classes,
            per_sample: 1,
            policy: LabelPolicy::Preserve,
        }),
    }
}

/// Trains one model and records probes, invariance, the loss decomposition
/// and the memorization verdict. Fully determined by `(config, seed)`.
pub fn run_single(config: &RunConfig, seed: u64) -> Result<RunRecord> {
    run_single_with_model(config, seed).map(|(r, _)| r)
}

/// [`run_single`] that also returns the trained model.
pub fn run_single_with_model(config: &RunConfig, seed: u64) -> Result<(RunRecord, Model<f64>)> {
    let started = Instant::now();
    let prep = prepare(config, seed)?;
    let (train, test) = (&prep.train, &prep.test);
    let model = init_params::<f64>(&config.model, train.dim(), train.num_random_classes, sub_seed(seed, sub::INIT))?;

    let k = effective_k(config.probe.k_neighbors, train.len());
    if k != config.probe.k_neighbors {
        log::warn!("probe uses k = {k} instead of {} for {} fit points", config.probe.k_neighbors, train.len());
    }
    let inv_n = config.probe.invariance_points.min(test.len());
    let mut monitor = Monitor {
        every: config.probe.schedule,
        k,
        train,
        test,
        inv_points: test.inputs.slice(s![..inv_n, ..]),
        inv_aug: AugmentationSpec::SubspaceNoise { d1: train.d1, strength: train.sigma },
        config,
        seed: sub_seed(seed, sub::INVARIANCE),
    };
    let probe_init = monitor.probe(&model)?;
    let invariance_init = monitor.invariance(&model);

    let (model, history) = train_run(
        model,
        train,
        &prep.aug,
        &config.optimizer,
        &config.budget,
        Some(&mut monitor),
        sub_seed(seed, sub::TRAIN),
    )?;
    if let Some(reason) = &history.aborted {
        log::warn!("run with seed {seed} diverged: {reason}");
    }

    let probe_final = monitor.probe(&model)?;
    let invariance_final = monitor.invariance(&model);
    let outputs = model.predict(train.inputs.view())?;
    let train_acc = accuracy(outputs.view(), &train.random_labels);
    let views = decomposition_views(&prep, config, sub_seed(seed, sub::DECOMPOSE))?;
    let decomposition_final = loss_decompose(&model, train, &views)?;
    let layers = if config.probe.per_layer {
        probe_layers(&model, train, test, k)?
            .into_iter()
            .map(|(clean, random)| LayerProbe { layer: clean.layer.clone(), clean, random })
            .collect()
    } else {
        Vec::new()
    };
    let verdict = classify_memorization(train_acc, probe_init.accuracy, probe_final.accuracy, config.probe.margin);
    let record = RunRecord {
        run_id: format!("single/seed={seed}"),
        axis: "single".into(),
        value: String::new(),
        arm: None,
        seed,
        config: config.clone(),
        n_train: train.len(),
        c_prime: train.num_random_classes,
        failed: history.aborted.is_some(),
        history,
        train_acc,
        memorized: train_acc >= 1.0,
        probe_init,
        probe_final,
        invariance_init,
        invariance_final,
        decomposition_final,
        layers,
        verdict,
        wall_time_s: config.record_wall_time.then(|| started.elapsed().as_secs_f64()),
    };
    Ok((record, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProjectorSpec;
    use crate::probe::Verdict;
    use crate::train::TrainBudget;

    fn small() -> RunConfig {
        let mut c = RunConfig::default();
        c.data.n = 40;
        c.data.n_test = 60;
        c.model.projector = ProjectorSpec::InverseDistance { patterns: 32 };
        c.probe.invariance_points = 30;
        c.probe.aug_pairs = 4;
        c.probe.cross_pairs = 8;
        c.probe.schedule = 2;
        c
    }

    #[test]
    fn zero_budget_is_not_memorized_and_probes_agree() {
        let mut c = small();
        c.budget = TrainBudget::steps(0);
        let r = run_single(&c, 3).unwrap();
        assert_eq!(r.probe_init, r.probe_final);
        assert_eq!(r.invariance_init, r.invariance_final);
        assert_eq!(r.verdict.verdict, Verdict::NotMemorized);
        assert!(r.verdict_is_consistent());
        assert!(r.history.epochs.is_empty());
        assert!(r.wall_time_s.is_none());
    }

    #[test]
    fn runs_are_deterministic_and_seed_dependent() {
        let mut c = small();
        c.budget = TrainBudget::steps(20);
        c.augmentation = AugConfig::SubspaceNoise { strength: 1.0, views: Some(3), policy: LabelPolicy::Randomize };
        let a = run_single(&c, 1).unwrap();
        let b = run_single(&c, 1).unwrap();
        assert_eq!(a, b);
        let other = run_single(&c, 2).unwrap();
        assert_ne!(a.probe_init, other.probe_init);
        assert_eq!(a.decomposition_final, b.decomposition_final);
        let d = &a.decomposition_final;
        assert!(d.residual.abs() <= 1e-10 * (1.0 + d.l_super));
    }

    #[test]
    fn callbacks_fill_the_history() {
        let mut c = small();
        c.optimizer.batch_size = 20;
        c.budget = TrainBudget::steps(8);
        let r = run_single(&c, 0).unwrap();
        // Two steps per epoch, four epochs, probes at epochs 2 and 4.
        let probed: Vec<usize> = r.history.epochs.iter().filter(|e| e.probe_acc.is_some()).map(|e| e.epoch).collect();
        assert_eq!(probed, vec![2, 4]);
        assert_eq!(r.history.epochs[3].probe_acc, Some(r.probe_final.accuracy));
    }

    #[test]
    fn iid_runs_train_on_the_subset() {
        let mut c = small();
        c.data.n = 200;
        c.budget = TrainBudget::steps(2);
        c.labels.classes = LabelClasses::PER_SAMPLE;
        c.augmentation = AugConfig::Iid { subset_size: 10, views_per_sample: 3 };
        let r = run_single(&c, 0).unwrap();
        assert_eq!(r.n_train, 10);
        assert_eq!(r.c_prime, 10);
        let p = prepare(&c, 0).unwrap();
        let AugmentationSpec::Materialized(v) = &p.aug else { panic!() };
        assert_eq!(v.per_sample, 4);
        assert_eq!(v.labels[..4], [p.train.random_labels[0]; 4]);
    }

    #[test]
    fn per_layer_probes_cover_every_layer() {
        let mut c = small();
        c.budget = TrainBudget::steps(1);
        c.probe.per_layer = true;
        let r = run_single(&c, 0).unwrap();
        let names: Vec<&str> = r.layers.iter().map(|l| l.layer.as_str()).collect();
        assert_eq!(names.last(), Some(&"output"));
        assert!(names.contains(&EMBEDDING_LAYER));
    }
}
