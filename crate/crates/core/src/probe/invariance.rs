use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::model::Model;
use crate::rng::{rng_at, stream};
use crate::scalar::{sq_dist, Scalar};
use crate::synthdata::{add_subspace_noise, AugmentationSpec};

pub const DEFAULT_AUG_PAIRS: usize = 32;
pub const DEFAULT_CROSS_PAIRS: usize = 128;

/// Denominators below this are treated as degenerate.
const MIN_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceEstimate {
    pub mean_i: f64,
    /// `I(x)` per evaluation point; `None` where the denominator vanished.
    pub per_sample: Vec<Option<f64>>,
    pub num_aug_pairs: usize,
    pub num_cross_pairs: usize,
    pub excluded: usize,
}

/// Draws one augmented copy of point `i` into `out`.
fn augment_into<T: Scalar>(
    aug: &AugmentationSpec<T>,
    points: &ArrayView2<'_, T>,
    i: usize,
    out: &mut [T],
    rng: &mut crate::rng::Rng,
) -> Result<()> {
    match aug {
        AugmentationSpec::None => {
            out.iter_mut().zip(points.row(i)).for_each(|(o, &x)| *o = x);
        }
        AugmentationSpec::SubspaceNoise { d1, strength } => {
            out.iter_mut().zip(points.row(i)).for_each(|(o, &x)| *o = x);
            add_subspace_noise(out, *d1, *strength, rng);
        }
        AugmentationSpec::Mixup { alpha } => {
            let j = rng.random_range(0..points.nrows());
            let a = T::of(alpha.sample(rng));
            for ((o, &x), &p) in out.iter_mut().zip(points.row(i)).zip(points.row(j)) {
                *o = a * x + (T::one() - a) * p;
            }
        }
        AugmentationSpec::IidResample { .. } | AugmentationSpec::Materialized(_) => {
            bail!(Input, "{} views cannot be drawn online", aug.kind_name())
        }
    }
    Ok(())
}

fn mean_dist<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    sq_dist(a, b).as_f64().sqrt()
}

/// Normalized invariance with an arbitrary feature map.
///
/// For each point `x` the numerator averages `|f(T1 x) - f(T2 x)|` over
/// independent view pairs and the denominator averages `|f(x) - f(x')|`
/// over other points `x'`. Materialized view sets are enumerated exactly
/// (all `B^2` ordered pairs), as is the denominator when `num_cross_pairs`
/// covers every other point.
pub fn invariance_with<T: Scalar, F>(
    features: F,
    points: ArrayView2<'_, T>,
    aug: &AugmentationSpec<T>,
    num_aug_pairs: usize,
    num_cross_pairs: usize,
    seed: u64,
) -> Result<InvarianceEstimate>
where
    F: Fn(ArrayView2<'_, T>) -> Result<Array2<T>>,
{
    if num_aug_pairs == 0 || num_cross_pairs == 0 {
        bail!(Input, "pair counts must be positive");
    }
    let n = points.nrows();
    if n < 2 {
        bail!(Input, "invariance needs at least two points");
    }
    if let AugmentationSpec::Materialized(v) = aug {
        if v.num_samples() != n || v.views.ncols() != points.ncols() {
            bail!(Input, "view set does not match the evaluation points");
        }
    }
    let base = features(points)?.as_standard_layout().into_owned();
    let d = points.ncols();
    let exact_cross = num_cross_pairs >= n - 1;
    let mut per_sample = Vec::with_capacity(n);
    let mut aug_pairs_used = num_aug_pairs;
    let mut cross_used = num_cross_pairs;
    for i in 0..n {
        let mut rng = rng_at(seed, &[stream::INVARIANCE, i as u64]);
        let numerator = match aug {
            AugmentationSpec::Materialized(v) => {
                let f = features(v.sample_views(i))?.as_standard_layout().into_owned();
                let b = f.nrows();
                aug_pairs_used = b * b;
                let mut total = 0.0;
                for r in f.rows() {
                    for s in f.rows() {
                        total += mean_dist(r.as_slice().unwrap(), s.as_slice().unwrap());
                    }
                }
                total / (b * b) as f64
            }
            _ => {
                let mut xs = Array2::zeros((2 * num_aug_pairs, d));
                for mut row in xs.rows_mut() {
                    augment_into(aug, &points, i, row.as_slice_mut().unwrap(), &mut rng)?;
                }
                let f = features(xs.view())?.as_standard_layout().into_owned();
                let total: f64 = (0..num_aug_pairs)
                    .map(|p| mean_dist(f.row(2 * p).as_slice().unwrap(), f.row(2 * p + 1).as_slice().unwrap()))
                    .sum();
                total / num_aug_pairs as f64
            }
        };
        let fx = base.row(i);
        let fx = fx.as_slice().unwrap();
        let denominator = if exact_cross {
            cross_used = n - 1;
            let total: f64 = (0..n).filter(|&j| j != i).map(|j| mean_dist(fx, base.row(j).as_slice().unwrap())).sum();
            total / (n - 1) as f64
        } else {
            let total: f64 = (0..num_cross_pairs)
                .map(|_| {
                    // Uniform over the n - 1 other points.
                    let mut j = rng.random_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    mean_dist(fx, base.row(j).as_slice().unwrap())
                })
                .sum();
            total / num_cross_pairs as f64
        };
        per_sample.push((denominator >= MIN_DENOMINATOR).then(|| numerator / denominator));
    }
    let defined: Vec<f64> = per_sample.iter().flatten().copied().collect();
    if defined.is_empty() {
        bail!(Estimation, "every invariance denominator is degenerate");
    }
    Ok(InvarianceEstimate {
        mean_i: defined.iter().sum::<f64>() / defined.len() as f64,
        excluded: n - defined.len(),
        per_sample,
        num_aug_pairs: aug_pairs_used,
        num_cross_pairs: cross_used,
    })
}

/// Normalized invariance of the encoder embedding.
pub fn normalized_invariance<T: Scalar>(
    model: &Model<T>,
    points: ArrayView2<'_, T>,
    aug: &AugmentationSpec<T>,
    num_aug_pairs: usize,
    num_cross_pairs: usize,
    seed: u64,
) -> Result<InvarianceEstimate> {
    invariance_with(|xs| model.embed(xs), points, aug, num_aug_pairs, num_cross_pairs, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Encoder, LinearEncoder, Projector};
    use crate::synthdata::{LabelPolicy, ViewSet};
    use ndarray::array;

    fn identity(xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(xs.to_owned())
    }

    fn points() -> Array2<f64> {
        let mut rng = rng_at(5, &[]);
        Array2::from_shape_fn((12, 6), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_augmentation_gives_zero() {
        let p = points();
        let est = invariance_with(identity, p.view(), &AugmentationSpec::None, 4, 8, 0).unwrap();
        assert!(est.per_sample.iter().all(|v| *v == Some(0.0)));
        assert_eq!(est.mean_i, 0.0);
    }

    #[test]
    fn encoder_that_drops_the_noise_block_is_invariant() {
        let p = points();
        let mut w = Array2::<f64>::zeros((6, 6));
        for j in 0..2 {
            w[[j, j]] = 1.0;
        }
        let model = crate::model::Model {
            encoder: Encoder::Linear(LinearEncoder::new(w)),
            projector: Projector::Identity,
            train_patterns: false,
        };
        let aug = AugmentationSpec::SubspaceNoise { d1: 2, strength: 1.0 };
        let est = normalized_invariance(&model, p.view(), &aug, 8, 8, 1).unwrap();
        assert_eq!(est.mean_i, 0.0);
    }

    #[test]
    fn three_points_two_views_by_hand() {
        let p = array![[0.0], [1.0], [3.0]];
        let views = array![[0.0], [0.5], [1.0], [1.0], [3.0], [2.0]];
        let aug = AugmentationSpec::Materialized(ViewSet {
            views,
            labels: vec![0; 6],
            num_classes: 1,
            per_sample: 2,
            policy: LabelPolicy::Preserve,
        });
        let est = invariance_with(identity, p.view(), &aug, 1, 10, 0).unwrap();
        // Numerators over all four ordered view pairs: 0.25, 0, 0.5.
        // Denominators over the other two points: 2, 1.5, 2.5.
        let expected = [0.25 / 2.0, 0.0, 0.5 / 2.5];
        for (got, want) in est.per_sample.iter().zip(expected) {
            assert!((got.unwrap() - want).abs() <= 1e-12);
        }
        assert_eq!(est.num_aug_pairs, 4);
        assert_eq!(est.num_cross_pairs, 2);
    }

    #[test]
    fn scale_free() {
        let p = points();
        let aug = AugmentationSpec::SubspaceNoise { d1: 3, strength: 0.7 };
        let a = invariance_with(identity, p.view(), &aug, 5, 4, 2).unwrap();
        let b = invariance_with(|xs| Ok(xs.mapv(|v| 3.5 * v)), p.view(), &aug, 5, 4, 2).unwrap();
        for (x, y) in a.per_sample.iter().zip(&b.per_sample) {
            assert!((x.unwrap() - y.unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn degenerate_denominators() {
        let p = Array2::<f64>::zeros((4, 3));
        let aug = AugmentationSpec::SubspaceNoise { d1: 1, strength: 1.0 };
        assert!(invariance_with(identity, p.view(), &aug, 2, 2, 0).is_err());
        let mut q = p.clone();
        q[[0, 0]] = 1.0;
        // Points 1..3 coincide but each still sees point 0.
        let est = invariance_with(identity, q.view(), &aug, 2, 3, 0).unwrap();
        assert_eq!(est.excluded, 0);
        assert!(invariance_with(identity, q.view(), &aug, 0, 3, 0).is_err());
    }
}
