use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{bail, Result};
use crate::rng::{rng_at, stream};
use crate::scalar::Scalar;

/// Target space for randomized labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    /// Labels drawn uniformly from `C'` classes.
    Classes(usize),
    /// `C' = n`; sample `i` receives its own class `e_i`.
    PerSample,
}

/// Replaces a `noise_fraction` share of labels with uniform draws from the
/// new label space.
///
/// The noisy subset is chosen uniformly without replacement. Samples outside
/// it keep their clean label, folded into `C'` classes modulo `C'` when
/// `C' < C`. A fresh draw may coincide with the clean label.
pub fn randomize_labels<T: Scalar>(
    ds: &LabeledDataset<T>,
    space: LabelSpace,
    noise_fraction: f64,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    if !(0.0..=1.0).contains(&noise_fraction) {
        bail!(Config, "noise_fraction must lie in [0, 1], got {noise_fraction}");
    }
    let n = ds.len();
    let mut out = ds.clone();
    match space {
        LabelSpace::PerSample => {
            if noise_fraction < 1.0 {
                bail!(Config, "per-sample labels require noise_fraction = 1");
            }
            out.random_labels = (0..n).collect();
            out.num_random_classes = n;
        }
        LabelSpace::Classes(c) => {
            if c == 0 {
                bail!(Config, "label space needs at least one class");
            }
            let noisy_count = (noise_fraction * n as f64).round() as usize;
            let mut noisy = vec![false; n];
            let picked = index::sample(&mut rng_at(seed, &[stream::LABEL_PICK]), n, noisy_count);
            for i in picked.iter() {
                noisy[i] = true;
            }
            out.random_labels = (0..n)
                .map(|i| {
                    if noisy[i] {
                        rng_at(seed, &[stream::LABELS, i as u64]).random_range(0..c)
                    } else {
                        ds.clean_labels[i] % c
                    }
                })
                .collect();
            out.num_random_classes = c;
        }
    }
    Ok(out)
}
