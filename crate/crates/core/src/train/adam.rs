use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::model::{Gradient, Model};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    /// Plain L2 term added to the gradient.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 4e-3, beta1: 0.9, beta2: 0.999, adam_epsilon: 1e-8, batch_size: 256, weight_decay: 0.0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero rate is allowed: it freezes the model, which tests rely on.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            bail!(Config, "learning_rate must be non-negative, got {}", self.learning_rate);
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bail!(Config, "Adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            bail!(Config, "adam_epsilon must be positive");
        }
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            bail!(Config, "weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(num_params: usize) -> Self {
        Self { m: vec![T::zero(); num_params], v: vec![T::zero(); num_params], step: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        bail!(Input, "parameter, gradient and state sizes disagree");
    }
    if grads.iter().any(|g| !g.is_finite()) {
        bail!(Training, "non-finite gradient at step {}", state.step + 1);
    }
    state.step += 1;
    let mut upd = Updater::new(state.step, cfg);
    for (i, p) in params.iter_mut().enumerate() {
        upd.apply(p, grads[i], &mut state.m[i], &mut state.v[i]);
    }
    Ok(())
}

/// Adam applied to a model's trainable parameters.
pub fn adam_step_model<T: Scalar>(
    model: &mut Model<T>,
    grad: &Gradient<T>,
    state: &mut AdamState<T>,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if grad.flat.len() != state.m.len() || grad.flat.len() != model.num_params() {
        bail!(Input, "gradient size {} does not match the model", grad.flat.len());
    }
    if grad.flat.iter().any(|g| !g.is_finite()) {
        bail!(Training, "non-finite gradient at step {}", state.step + 1);
    }
    state.step += 1;
    let mut upd = Updater::new(state.step, cfg);
    let (m, v) = (&mut state.m, &mut state.v);
    model.update_params(|i, p| upd.apply(p, grad.flat[i], &mut m[i], &mut v[i]));
    Ok(())
}

struct Updater<T> {
    lr: T,
    b1: T,
    b2: T,
    eps: T,
    wd: T,
    c1: T,
    c2: T,
}

impl<T: Scalar> Updater<T> {
    fn new(step: u64, cfg: &OptimizerConfig) -> Self {
        let t = step as i32;
        Self {
            lr: T::of(cfg.learning_rate),
            b1: T::of(cfg.beta1),
            b2: T::of(cfg.beta2),
            eps: T::of(cfg.adam_epsilon),
            wd: T::of(cfg.weight_decay),
            c1: T::one() - T::of(cfg.beta1).powi(t),
            c2: T::one() - T::of(cfg.beta2).powi(t),
        }
    }

    #[inline]
    fn apply(&mut self, p: &mut T, g: T, m: &mut T, v: &mut T) {
        let g = g + self.wd * *p;
        *m = self.b1 * *m + (T::one() - self.b1) * g;
        *v = self.b2 * *v + (T::one() - self.b2) * g * g;
        let m_hat = *m / self.c1;
        let v_hat = *v / self.c2;
        *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}
