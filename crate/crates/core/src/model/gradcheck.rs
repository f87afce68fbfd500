use ndarray::{ArrayView1, Axis};

use super::{backward, Gradient, Model, Projector};
use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Below this magnitude both gradients count as zero and the absolute
/// difference is reported instead of the relative one.
const ZERO_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    /// Flat index and block name of the worst coordinate.
    pub worst: Option<(usize, String)>,
    pub checked: usize,
    pub skipped: usize,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn sample_loss<T: Scalar>(model: &Model<T>, x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> Result<T> {
    let out = model.predict(x.insert_axis(Axis(0)))?;
    Ok(out.row(0).iter().zip(y.iter()).map(|(a, b)| (*a - *b) * (*a - *b)).sum())
}

/// Coordinates whose central difference would straddle a projector
/// singularity.
fn singular_mask<T: Scalar>(model: &Model<T>, x: ArrayView1<'_, T>, step: f64) -> Result<Vec<bool>> {
    let layout = model.layout();
    let mut skip = vec![false; model.num_params()];
    let Projector::InverseDistance(p) = &model.projector else {
        return Ok(skip);
    };
    let z = model.embed(x.insert_axis(Axis(0)))?;
    let z = z.row(0);
    let reach = 10.0 * step * x.iter().fold(1.0f64, |m, v| m.max(v.as_f64().abs()));
    let near: Vec<bool> = p
        .patterns
        .rows()
        .into_iter()
        .map(|v| {
            let d: f64 = z.iter().zip(v.iter()).map(|(a, b)| (*a - *b).as_f64().powi(2)).sum();
            d.sqrt() < reach.max(10.0 * step)
        })
        .collect();
    if near.iter().any(|&b| b) {
        for block in &layout {
            if block.name.starts_with("encoder") {
                skip[block.range()].iter_mut().for_each(|s| *s = true);
            } else if block.name == "projector.patterns" {
                let m = p.dim();
                for (k, &is_near) in near.iter().enumerate() {
                    if is_near {
                        let start = block.offset + k * m;
                        skip[start..start + m].iter_mut().for_each(|s| *s = true);
                    }
                }
            }
        }
    }
    Ok(skip)
}

/// Compares a supplied gradient of `|f(x) - y|^2` against central finite
/// differences.
pub fn compare_gradient<T: Scalar>(
    model: &Model<T>,
    x: ArrayView1<'_, T>,
    y: ArrayView1<'_, T>,
    analytic: &Gradient<T>,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        bail!(Input, "finite-difference step must be positive");
    }
    if analytic.flat.len() != model.num_params() {
        bail!(Input, "gradient has {} entries, model has {}", analytic.flat.len(), model.num_params());
    }
    let skip = singular_mask(model, x, step)?;
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut params = base.clone();
    let h = T::of(step);
    let mut report =
        GradCheckReport { max_error: 0.0, worst: None, checked: 0, skipped: 0, step, tolerance, passed: true };
    for i in 0..base.len() {
        if skip[i] {
            report.skipped += 1;
            continue;
        }
        params[i] = base[i] + h;
        probe.set_flat_params(&params)?;
        let plus = sample_loss(&probe, x, y)?;
        params[i] = base[i] - h;
        probe.set_flat_params(&params)?;
        let minus = sample_loss(&probe, x, y)?;
        params[i] = base[i];

        let numeric = ((plus - minus) / (h + h)).as_f64();
        let exact = analytic.flat[i].as_f64();
        let scale = numeric.abs().max(exact.abs());
        let err = if scale <= ZERO_FLOOR { (numeric - exact).abs() } else { (numeric - exact).abs() / scale };
        report.checked += 1;
        if !(err <= report.max_error) {
            report.max_error = err;
            let name =
                analytic.layout.iter().find(|b| b.range().contains(&i)).map(|b| b.name.clone()).unwrap_or_default();
            report.worst = Some((i, name));
        }
    }
    report.passed = report.max_error <= tolerance;
    Ok(report)
}

/// Analytic gradient from [`backward`] checked against finite differences.
pub fn grad_check<T: Scalar>(
    model: &Model<T>,
    x: ArrayView1<'_, T>,
    y: ArrayView1<'_, T>,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let analytic = backward(model, x, y)?;
    compare_gradient(model, x, y, &analytic, step, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Activation, EncoderSpec, ModelSpec, ProjectorSpec};
    use crate::rng::rng_at;
    use ndarray::Array1;
    use rand::Rng as _;

    fn specs() -> Vec<ModelSpec> {
        vec![
            ModelSpec { projector: ProjectorSpec::InverseDistance { patterns: 9 }, ..Default::default() },
            ModelSpec {
                projector: ProjectorSpec::InverseDistance { patterns: 9 },
                train_patterns: false,
                ..Default::default()
            },
            ModelSpec {
                encoder: EncoderSpec::Mlp { hidden: vec![6], activation: Activation::Tanh },
                projector: ProjectorSpec::Mlp { hidden: vec![5], activation: Activation::Relu },
                embed_dim: Some(4),
                ..Default::default()
            },
        ]
    }

    #[test]
    fn random_small_models_pass() {
        let mut rng = rng_at(21, &[]);
        for (s, spec) in specs().iter().enumerate() {
            for trial in 0..5 {
                let m: Model<f64> = init_params(spec, 4, 3, (s * 10 + trial) as u64).unwrap();
                let x = Array1::from_shape_fn(4, |_| rng.random_range(-1.5..1.5));
                let mut y = Array1::zeros(3);
                y[rng.random_range(0..3)] = 1.0;
                let r = grad_check(&m, x.view(), y.view(), 1e-5, 1e-4).unwrap();
                assert!(r.passed, "spec {s} trial {trial}: {r:?}");
                assert_eq!(r.checked + r.skipped, m.num_params());
            }
        }
    }

    #[test]
    fn zero_gradient_uses_absolute_error() {
        let m: Model<f64> = init_params(&specs()[0], 4, 3, 1).unwrap();
        let x = ndarray::array![0.2, 0.1, -0.4, 0.9];
        let y = m.forward(x.view()).unwrap().output().clone();
        let r = grad_check(&m, x.view(), y.view(), 1e-5, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.max_error < 1e-9);
    }

    #[test]
    fn sign_flip_is_caught() {
        let m: Model<f64> = init_params(&specs()[0], 4, 3, 2).unwrap();
        let x = ndarray::array![0.3, -0.7, 0.5, 1.1];
        let y = ndarray::array![0.0, 1.0, 0.0];
        let mut g = backward(&m, x.view(), y.view()).unwrap();
        let idx = (0..g.flat.len()).max_by(|&a, &b| g.flat[a].abs().total_cmp(&g.flat[b].abs())).unwrap();
        g.flat[idx] = -g.flat[idx];
        let r = compare_gradient(&m, x.view(), y.view(), &g, 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst.unwrap().0, idx);
    }

    #[test]
    fn skips_coordinates_at_a_pattern() {
        let mut m: Model<f64> = init_params(&specs()[0], 4, 3, 3).unwrap();
        let x = ndarray::array![0.3, -0.7, 0.5, 1.1];
        let z = m.embed(x.view().insert_axis(Axis(0))).unwrap();
        if let Projector::InverseDistance(p) = &mut m.projector {
            p.patterns.row_mut(0).assign(&z.row(0));
        }
        let r = grad_check(&m, x.view(), ndarray::array![1.0, 0.0, 0.0].view(), 1e-5, 1e-4).unwrap();
        assert_eq!(r.skipped, 16 + 4);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let m: Model<f64> = init_params(&specs()[0], 4, 3, 0).unwrap();
        let x = Array1::zeros(4);
        let y = Array1::zeros(3);
        assert!(grad_check(&m, x.view(), y.view(), 0.0, 1e-4).is_err());
    }
}
