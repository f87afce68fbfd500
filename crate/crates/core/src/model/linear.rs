use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// `h(x) = W x` with `W` of shape `m x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder<T> {
    pub weight: Array2<T>,
}

impl<T: Scalar> LinearEncoder<T> {
    pub fn new(weight: Array2<T>) -> Self {
        Self { weight }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if x.len() != self.input_dim() {
            bail!(Input, "encoder expects {} inputs, got {}", self.input_dim(), x.len());
        }
        Ok(self.weight.dot(&x))
    }

    /// Row-wise forward for a `b x d` batch.
    pub(crate) fn forward_batch(&self, xs: ArrayView2<'_, T>) -> Array2<T> {
        xs.dot(&self.weight.t())
    }

    /// Gradient w.r.t. `W` given `dL/dZ` for the batch.
    pub(crate) fn weight_grad(&self, xs: ArrayView2<'_, T>, grad_out: ArrayView2<'_, T>) -> Array2<T> {
        grad_out.t().dot(&xs)
    }
}

/// Convenience wrapper matching the operation name used elsewhere.
pub fn linear_forward<T: Scalar>(enc: &LinearEncoder<T>, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
    enc.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_at;
    use rand::Rng as _;

    #[test]
    fn identity_and_zero() {
        let x = ndarray::array![0.5, -2.0, 3.0];
        let id = LinearEncoder::new(Array2::<f64>::eye(3));
        assert_eq!(id.forward(x.view()).unwrap(), x);
        let zero = LinearEncoder::new(Array2::<f64>::zeros((3, 3)));
        assert_eq!(zero.forward(x.view()).unwrap(), Array1::<f64>::zeros(3));
    }

    #[test]
    fn matches_naive_double_loop() {
        let mut rng = rng_at(17, &[]);
        for _ in 0..20 {
            let (m, d) = (rng.random_range(1..9), rng.random_range(1..9));
            let w: Array2<f64> = Array2::from_shape_fn((m, d), |_| rng.random_range(-2.0..2.0));
            let x = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
            let out = LinearEncoder::new(w.clone()).forward(x.view()).unwrap();
            for j in 0..m {
                let mut acc = 0.0f64;
                for k in 0..d {
                    acc += w[[j, k]] * x[k];
                }
                assert!((out[j] - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let enc = LinearEncoder::new(Array2::<f64>::eye(3));
        assert!(enc.forward(Array1::zeros(2).view()).is_err());
    }
}
