use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step_model, AdamState, OptimizerConfig};
use super::loss::{accuracy, mse_loss};
use crate::error::{bail, Result};
use crate::model::Model;
use crate::rng::{rng_at, stream};
use crate::scalar::Scalar;
use crate::synthdata::add_subspace_noise;
use crate::synthdata::{onehot, AugmentationSpec, LabeledDataset};

/// Stopping rule for a run; whichever bound is hit first ends training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBudget {
    pub max_epochs: Option<usize>,
    pub max_steps: Option<usize>,
    /// Stop once the unaugmented training loss drops below this value.
    pub loss_target: Option<f64>,
}

impl Default for TrainBudget {
    fn default() -> Self {
        Self { max_epochs: None, max_steps: Some(20_000), loss_target: None }
    }
}

impl TrainBudget {
    pub fn steps(max_steps: usize) -> Self {
        Self { max_epochs: None, max_steps: Some(max_steps), loss_target: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs.is_none() && self.max_steps.is_none() {
            bail!(Config, "budget needs max_epochs or max_steps");
        }
        if let Some(t) = self.loss_target {
            if !(t >= 0.0) {
                bail!(Config, "loss_target must be non-negative");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Mean minibatch loss over this epoch's (augmented) batches.
    pub train_loss: f64,
    pub train_loss_unaug: f64,
    /// Argmax accuracy on the unaugmented inputs against the random labels.
    pub train_acc_unaug: f64,
    pub probe_acc: Option<f64>,
    pub invariance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    /// Reason the run stopped early because of a numerical failure.
    pub aborted: Option<String>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn final_train_acc(&self) -> Option<f64> {
        self.last().map(|r| r.train_acc_unaug)
    }

    /// CSV with columns `epoch, train_loss, train_acc_unaug, probe_acc,
    /// invariance`; missing callback values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "train_acc_unaug", "probe_acc", "invariance"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.train_acc_unaug.to_string(),
                opt(r.probe_acc),
                opt(r.invariance),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Extra measurements taken at the end of selected epochs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochMetrics {
    pub probe_acc: Option<f64>,
    pub invariance: Option<f64>,
}

pub trait TrainCallback<T> {
    /// Epoch period; `0` disables the callback.
    fn every(&self) -> usize;

    fn on_epoch(&mut self, epoch: usize, model: &Model<T>) -> Result<EpochMetrics>;
}

/// Where each training example of an epoch comes from.
enum Source<'a, T> {
    /// Base samples, optionally perturbed online.
    Online {
        noise: Option<(usize, T)>,
        mixup: Option<crate::synthdata::AlphaDist>,
    },
    Frozen(&'a crate::synthdata::ViewSet<T>),
}

/// Trains `model` on the random labels of `ds` with Adam and MSE.
///
/// Generative augmentations draw one fresh view per sample per step.
/// An epoch is a shuffled pass over the base samples, or over all `n * B`
/// frozen views for a materialized set. A non-finite loss or gradient
/// aborts the run and returns the partial history with `aborted` set.
#[allow(clippy::too_many_arguments)]
pub fn train_run<T: Scalar>(
    mut model: Model<T>,
    ds: &LabeledDataset<T>,
    aug: &AugmentationSpec<T>,
    opt: &OptimizerConfig,
    budget: &TrainBudget,
    mut callback: Option<&mut dyn TrainCallback<T>>,
    seed: u64,
) -> Result<(Model<T>, TrainHistory)> {
    opt.validate()?;
    budget.validate()?;
    if ds.is_empty() {
        bail!(Input, "cannot train on an empty dataset");
    }
    if model.input_dim() != ds.dim() || model.output_dim() != ds.num_random_classes {
        bail!(
            Input,
            "model maps {} -> {} but data is {} -> {}",
            model.input_dim(),
            model.output_dim(),
            ds.dim(),
            ds.num_random_classes
        );
    }
    let source = match aug {
        AugmentationSpec::None => Source::Online { noise: None, mixup: None },
        AugmentationSpec::SubspaceNoise { d1, strength } => {
            if *d1 > ds.dim() {
                bail!(Input, "noise subspace starts past the input dimension");
            }
            Source::Online { noise: Some((*d1, *strength)), mixup: None }
        }
        AugmentationSpec::Mixup { alpha } => Source::Online { noise: None, mixup: Some(*alpha) },
        AugmentationSpec::IidResample { .. } => {
            bail!(Input, "i.i.d. augmentation must be realized with iid_augment before training")
        }
        AugmentationSpec::Materialized(v) => {
            if v.num_samples() != ds.len() || v.views.ncols() != ds.dim() || v.num_classes != ds.num_random_classes {
                bail!(Input, "materialized views do not match the dataset");
            }
            Source::Frozen(v)
        }
    };

    let base_targets: Array2<T> = onehot(&ds.random_labels, ds.num_random_classes);
    let (pool_inputs, pool_labels) = match &source {
        Source::Frozen(v) => (&v.views, &v.labels),
        Source::Online { .. } => (&ds.inputs, &ds.random_labels),
    };
    let pool = pool_inputs.nrows();
    let batch = opt.batch_size.min(pool);
    let c = ds.num_random_classes;
    let d = ds.dim();
    let max_steps = budget.max_steps.unwrap_or(usize::MAX);
    let max_epochs = budget.max_epochs.unwrap_or(usize::MAX);

    let mut state = AdamState::new(model.num_params());
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..pool).collect();
    let mut step = 0usize;
    let mut epoch = 0usize;

    'epochs: while epoch < max_epochs && step < max_steps {
        epoch += 1;
        order.shuffle(&mut rng_at(seed, &[stream::SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            if step >= max_steps {
                break;
            }
            let b = chunk.len();
            let mut xs = Array2::<T>::zeros((b, d));
            let mut ys = Array2::<T>::zeros((b, c));
            let mut rng = rng_at(seed, &[stream::AUGMENT, step as u64]);
            for (r, &i) in chunk.iter().enumerate() {
                xs.row_mut(r).assign(&pool_inputs.row(i));
                ys[[r, pool_labels[i]]] = T::one();
                if let Source::Online { noise, mixup } = &source {
                    if let Some((d1, strength)) = noise {
                        add_subspace_noise(xs.row_mut(r).as_slice_mut().unwrap(), *d1, *strength, &mut rng);
                    }
                    if let Some(dist) = mixup {
                        let j = rng.random_range(0..pool);
                        let a = T::of(dist.sample(&mut rng));
                        let partner = pool_inputs.row(j);
                        xs.row_mut(r).zip_mut_with(&partner, |x, &p| *x = a * *x + (T::one() - a) * p);
                        ys.row_mut(r).mapv_inplace(|y| a * y);
                        ys[[r, pool_labels[j]]] += T::one() - a;
                    }
                }
            }
            let (loss, grad) = model.loss_and_grad(xs.view(), ys.view())?;
            if !loss.is_finite() {
                history.aborted = Some(format!("non-finite loss at step {}", step + 1));
                break 'epochs;
            }
            if let Err(e) = adam_step_model(&mut model, &grad, &mut state, opt) {
                history.aborted = Some(e.to_string());
                break 'epochs;
            }
            step += 1;
            loss_sum += loss.as_f64();
            batches += 1;
        }
        if batches == 0 {
            break;
        }
        let out = model.predict(ds.inputs.view())?;
        let unaug_loss = mse_loss(out.view(), base_targets.view())?.as_f64();
        let mut record = EpochRecord {
            epoch,
            step,
            train_loss: loss_sum / batches as f64,
            train_loss_unaug: unaug_loss,
            train_acc_unaug: accuracy(out.view(), &ds.random_labels),
            probe_acc: None,
            invariance: None,
        };
        if let Some(cb) = callback.as_deref_mut() {
            let every = cb.every();
            if every > 0 && epoch.is_multiple_of(every) {
                let m = cb.on_epoch(epoch, &model)?;
                record.probe_acc = m.probe_acc;
                record.invariance = m.invariance;
            }
        }
        history.epochs.push(record);
        if budget.loss_target.is_some_and(|t| unaug_loss < t) {
            break;
        }
    }
    history.steps = step;
    Ok((model, history))
}
