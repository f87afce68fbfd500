//! Numerical laboratory for random-label memorization under data
//! augmentation.
//!
//! The crate generates Gaussian-mixture toy data, trains small encoder +
//! projector models against randomized labels with Adam and an MSE loss, and
//! measures what the encoder learned: K-NN probing, normalized invariance,
//! and the exact split of the augmented loss into an invariance term and a
//! bias term. [`experiments`] wires these into seeded sweeps and the
//! capacity phase grid.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the double-precision instantiation used by the
//! experiment drivers.

pub mod error;
pub mod experiments;
pub mod model;
pub mod probe;
pub mod rng;
pub mod scalar;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset = synthdata::LabeledDataset<f64>;
pub type Augmentation = synthdata::AugmentationSpec<f64>;
pub type Views = synthdata::ViewSet<f64>;
pub type Model = model::Model<f64>;
pub type History = train::TrainHistory;
pub type Decomposition = train::DecompositionReport<f64>;
