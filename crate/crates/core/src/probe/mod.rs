//! What the encoder learned: K-NN probing on clean and random labels,
//! normalized invariance, and the benign/malign verdict.

mod invariance;
mod knn;
mod verdict;

pub use invariance::{
    invariance_with, normalized_invariance, InvarianceEstimate, DEFAULT_AUG_PAIRS, DEFAULT_CROSS_PAIRS,
};
pub use knn::{
    effective_k, knn_predict, knn_predict_batch, knn_probe, probe_features, probe_layers, LabelSource, ProbeResult,
    DEFAULT_K,
};
pub use verdict::{classify_memorization, MemorizationVerdict, Verdict, DEFAULT_MARGIN};
