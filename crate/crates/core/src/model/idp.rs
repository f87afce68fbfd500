//! Inverse-distance projector.
//!
//! `g(z) = sum_i (1/|z - v_i|) / (sum_j 1/|z - v_j|) * l_i` with fixed one-hot
//! pattern labels `l_i`. Distances are floored at `epsilon`, so `z = v_i`
//! returns `l_i` up to the floor and the map stays finite everywhere.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{bail, Result};
use crate::scalar::{sq_dist, sq_norm, Scalar};

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct InverseDistanceProjector<T> {
    /// `K_p x m`, one pattern per row.
    pub patterns: Array2<T>,
    /// Class index of each pattern's one-hot label. Never trained.
    pub pattern_labels: Vec<usize>,
    pub num_classes: usize,
    pub epsilon: T,
}

/// Intermediate values kept for the backward pass.
pub(crate) struct IdpTrace<T> {
    /// Floored distances, `b x K_p`.
    pub dist: Array2<T>,
    /// `sum_j 1/r_j` per row.
    pub norm: Array1<T>,
    pub out: Array2<T>,
}

impl<T: Scalar> InverseDistanceProjector<T> {
    pub fn new(patterns: Array2<T>, pattern_labels: Vec<usize>, num_classes: usize, epsilon: T) -> Result<Self> {
        if patterns.nrows() != pattern_labels.len() {
            bail!(Input, "{} patterns but {} labels", patterns.nrows(), pattern_labels.len());
        }
        if pattern_labels.iter().any(|&c| c >= num_classes) {
            bail!(Input, "pattern label out of range");
        }
        Ok(Self { patterns, pattern_labels, num_classes, epsilon })
    }

    pub fn num_patterns(&self) -> usize {
        self.patterns.nrows()
    }

    pub fn dim(&self) -> usize {
        self.patterns.ncols()
    }

    /// Single-point evaluation, one scalar loop per pattern.
    pub fn forward(&self, z: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if z.len() != self.dim() {
            bail!(Input, "projector expects dimension {}, got {}", self.dim(), z.len());
        }
        let z = z.to_vec();
        let patterns = self.patterns.as_standard_layout();
        let mut out = Array1::zeros(self.num_classes);
        let mut total = T::zero();
        for (k, v) in patterns.rows().into_iter().enumerate() {
            let r = sq_dist(&z, v.as_slice().unwrap()).sqrt().max(self.epsilon);
            let w = r.recip();
            out[self.pattern_labels[k]] += w;
            total += w;
        }
        Ok(out / total)
    }

    /// Batched squared distances via `|z|^2 + |v|^2 - 2 z.v`, recomputed
    /// directly where cancellation would lose precision.
    fn sq_distances(&self, zs: ArrayView2<'_, T>) -> Array2<T> {
        let zs = zs.as_standard_layout();
        let zn: Vec<T> = zs.rows().into_iter().map(|r| sq_norm(r.as_slice().unwrap())).collect();
        let patterns = self.patterns.as_standard_layout();
        let vn: Vec<T> = patterns.rows().into_iter().map(|r| sq_norm(r.as_slice().unwrap())).collect();
        let mut d2 = zs.dot(&self.patterns.t());
        let two = T::of(2.0);
        let guard = T::of(1e-6);
        for (b, mut row) in d2.rows_mut().into_iter().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                let scale = zn[b] + vn[k];
                let est = scale - two * *v;
                *v = if est <= guard * scale {
                    sq_dist(zs.row(b).as_slice().unwrap(), patterns.row(k).as_slice().unwrap())
                } else {
                    est
                };
            }
        }
        d2
    }

    pub(crate) fn forward_batch(&self, zs: ArrayView2<'_, T>) -> IdpTrace<T> {
        let mut dist = self.sq_distances(zs);
        let (b, c) = (zs.nrows(), self.num_classes);
        let mut out = Array2::zeros((b, c));
        let mut norm = Array1::zeros(b);
        for ((mut drow, mut orow), s) in dist.rows_mut().into_iter().zip(out.rows_mut()).zip(norm.iter_mut()) {
            let mut total = T::zero();
            for (k, d) in drow.iter_mut().enumerate() {
                *d = d.sqrt().max(self.epsilon);
                let w = d.recip();
                orow[self.pattern_labels[k]] += w;
                total += w;
            }
            orow.mapv_inplace(|v| v / total);
            *s = total;
        }
        IdpTrace { dist, norm, out }
    }

    /// Backpropagates `dL/dout`. Returns `(dL/dZ, dL/dV)`; pairs sitting on
    /// the distance floor contribute nothing.
    pub(crate) fn backward_batch(
        &self,
        zs: ArrayView2<'_, T>,
        trace: &IdpTrace<T>,
        grad_out: ArrayView2<'_, T>,
        want_patterns: bool,
    ) -> (Array2<T>, Option<Array2<T>>) {
        // a_bk multiplies (z_b - v_k) in dL/dz_b.
        let mut coef = Array2::zeros(trace.dist.raw_dim());
        for (b, mut crow) in coef.rows_mut().into_iter().enumerate() {
            let g = grad_out.row(b);
            let g_dot_out = g.dot(&trace.out.row(b));
            let s = trace.norm[b];
            for (k, a) in crow.iter_mut().enumerate() {
                let r = trace.dist[[b, k]];
                if r > self.epsilon {
                    let dw = (g[self.pattern_labels[k]] - g_dot_out) / s;
                    *a = -dw / (r * r * r);
                }
            }
        }
        let row_sums = coef.sum_axis(Axis(1));
        let mut gz = coef.dot(&self.patterns);
        for (mut row, (z, &sa)) in gz.rows_mut().into_iter().zip(zs.rows().into_iter().zip(row_sums.iter())) {
            for (g, &zj) in row.iter_mut().zip(z.iter()) {
                *g = zj * sa - *g;
            }
        }
        let gv = want_patterns.then(|| {
            let col_sums = coef.sum_axis(Axis(0));
            let mut gv = coef.t().dot(&zs);
            for (mut row, (v, &sa)) in
                gv.rows_mut().into_iter().zip(self.patterns.rows().into_iter().zip(col_sums.iter()))
            {
                for (g, &vj) in row.iter_mut().zip(v.iter()) {
                    *g = vj * sa - *g;
                }
            }
            gv
        });
        (gz, gv)
    }

    /// Smallest floored distance from `z` to any pattern.
    pub fn min_distance(&self, z: ArrayView1<'_, T>) -> T {
        let z = z.to_vec();
        let patterns = self.patterns.as_standard_layout();
        patterns.rows().into_iter().map(|v| sq_dist(&z, v.as_slice().unwrap()).sqrt()).fold(T::infinity(), T::min)
    }
}

pub fn idp_forward<T: Scalar>(proj: &InverseDistanceProjector<T>, z: ArrayView1<'_, T>) -> Result<Array1<T>> {
    proj.forward(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_at;
    use ndarray::array;
    use rand::Rng as _;

    fn proj(patterns: Array2<f64>, labels: Vec<usize>, c: usize) -> InverseDistanceProjector<f64> {
        InverseDistanceProjector::new(patterns, labels, c, DEFAULT_EPSILON).unwrap()
    }

    #[test]
    fn equidistant_patterns_average_labels() {
        let p = proj(array![[1.0, 0.0], [-1.0, 0.0]], vec![0, 2], 3);
        let out = p.forward(array![0.0, 5.0].view()).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-15 && out[1] == 0.0 && (out[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_point_returns_its_label() {
        let p = proj(array![[1.0, 0.0], [-1.0, 0.0], [0.0, 3.0]], vec![1, 0, 0], 2);
        let out = p.forward(array![1.0, 0.0].view()).unwrap();
        assert!((out[1] - 1.0).abs() < 1e-6);
        let batch = p.forward_batch(array![[1.0, 0.0]].view());
        assert!((batch.out[[0, 1]] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matches_scalar_formula() {
        let mut rng = rng_at(3, &[]);
        for _ in 0..50 {
            let (k, m, c) = (3, rng.random_range(1..6), rng.random_range(1..4));
            let v = Array2::from_shape_fn((k, m), |_| rng.random_range(-1.0..1.0));
            let labels: Vec<usize> = (0..k).map(|_| rng.random_range(0..c)).collect();
            let z = Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0));
            let p = proj(v.clone(), labels.clone(), c);
            // Independent evaluation of the textbook formula.
            let inv: Vec<f64> =
                (0..k).map(|i| 1.0 / (0..m).map(|j| (z[j] - v[[i, j]]).powi(2)).sum::<f64>().sqrt()).collect();
            let denom: f64 = inv.iter().sum();
            let mut expect = vec![0.0; c];
            for i in 0..k {
                expect[labels[i]] += inv[i] / denom;
            }
            let single = p.forward(z.view()).unwrap();
            let batch = p.forward_batch(z.view().insert_axis(Axis(0)));
            for j in 0..c {
                assert!((single[j] - expect[j]).abs() <= 1e-12);
                assert!((batch.out[[0, j]] - expect[j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn output_is_in_simplex_and_permutation_equivariant() {
        let mut rng = rng_at(4, &[]);
        let (k, m, c) = (40, 5, 6);
        let v = Array2::from_shape_fn((k, m), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..k).map(|_| rng.random_range(0..c)).collect();
        let p = proj(v.clone(), labels.clone(), c);
        let mut perm: Vec<usize> = (0..k).collect();
        perm.reverse();
        perm.swap(3, 17);
        let q = proj(v.select(Axis(0), &perm), perm.iter().map(|&i| labels[i]).collect(), c);
        for _ in 0..20 {
            let z = Array1::from_shape_fn(m, |_| rng.random_range(-2.0..2.0));
            let a = p.forward(z.view()).unwrap();
            let b = q.forward(z.view()).unwrap();
            assert!(a.iter().all(|&x| x >= 0.0));
            assert!((a.sum() - 1.0).abs() < 1e-12);
            for j in 0..c {
                assert!((a[j] - b[j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_inconsistent_construction() {
        assert!(InverseDistanceProjector::new(Array2::<f64>::zeros((2, 2)), vec![0], 2, 1e-8).is_err());
        assert!(InverseDistanceProjector::new(Array2::<f64>::zeros((1, 2)), vec![3], 2, 1e-8).is_err());
    }
}
