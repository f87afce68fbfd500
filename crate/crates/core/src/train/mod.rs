//! Adam + MSE training against randomized labels and the split of the
//! augmented loss into invariance and bias terms.

mod adam;
mod decompose;
mod loss;
mod trainer;

pub use adam::{adam_step, adam_step_model, AdamState, OptimizerConfig};
pub use decompose::{
    bias_limit_check, decompose_outputs, loss_decompose, mean_deviation_identity, pairwise_limit_check,
    BiasLimitReport, DecompositionReport, IdentityCheck,
};
pub use loss::{accuracy, argmax, mse_loss};
pub use trainer::{train_run, EpochMetrics, EpochRecord, TrainBudget, TrainCallback, TrainHistory};
