use ndarray::ArrayView2;

use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Mean over samples of the squared Euclidean distance between prediction
/// and target rows.
pub fn mse_loss<T: Scalar>(predictions: ArrayView2<'_, T>, targets: ArrayView2<'_, T>) -> Result<T> {
    if predictions.nrows() == 0 {
        bail!(Input, "mse_loss of an empty batch");
    }
    if predictions.dim() != targets.dim() {
        bail!(Input, "prediction shape {:?} differs from target shape {:?}", predictions.dim(), targets.dim());
    }
    let total: T = predictions.iter().zip(targets.iter()).map(|(p, t)| (*p - *t) * (*p - *t)).sum();
    Ok(total / T::of(predictions.nrows() as f64))
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax<T: Scalar>(row: ndarray::ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Share of rows whose argmax equals the label.
pub fn accuracy<T: Scalar>(outputs: ArrayView2<'_, T>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = outputs.rows().into_iter().zip(labels).filter(|(row, &l)| argmax(row.view()) == l).count();
    correct as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_at;
    use ndarray::{array, Array2};
    use rand::Rng as _;

    #[test]
    fn basic_values() {
        let a = array![[0.0, 0.0]];
        let b = array![[1.0, 0.0]];
        assert_eq!(mse_loss(a.view(), a.view()).unwrap(), 0.0);
        assert_eq!(mse_loss(a.view(), b.view()).unwrap(), 1.0);
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = rng_at(5, &[]);
        let p: Array2<f64> = Array2::from_shape_fn((13, 4), |_| rng.random_range(-1.0..1.0));
        let t: Array2<f64> = Array2::from_shape_fn((13, 4), |_| rng.random_range(-1.0..1.0));
        let mut acc = 0.0;
        for i in 0..13 {
            let mut row = 0.0;
            for j in 0..4 {
                row += (p[[i, j]] - t[[i, j]]) * (p[[i, j]] - t[[i, j]]);
            }
            acc += row;
        }
        assert!((mse_loss(p.view(), t.view()).unwrap() - acc / 13.0).abs() <= 1e-12);
    }

    #[test]
    fn errors_on_bad_shapes() {
        let e = Array2::<f64>::zeros((0, 3));
        assert!(mse_loss(e.view(), e.view()).is_err());
        assert!(mse_loss(array![[1.0]].view(), array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn argmax_prefers_lower_index() {
        assert_eq!(argmax(array![0.2, 0.4, 0.4].view()), 1);
        assert_eq!(accuracy(array![[0.5, 0.5], [0.1, 0.9]].view(), &[0, 0]), 0.5);
    }
}
