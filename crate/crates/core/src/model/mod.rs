//! Encoder + projector models with hand-derived gradients.
//!
//! A [`Model`] is an encoder `h` (linear or MLP) followed by a projector `g`
//! (identity, inverse-distance, or MLP). Parameters are exposed as one flat
//! vector in a fixed block order so that the optimizer, gradient checks and
//! checkpoints all share the same layout.

mod checkpoint;
mod gradcheck;
mod idp;
mod linear;
mod mlp;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use idp::{idp_forward, InverseDistanceProjector, DEFAULT_EPSILON};
pub use linear::{linear_forward, LinearEncoder};
pub use mlp::{Activation, Dense, MlpNetwork};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::{rng_at, stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder<T> {
    Linear(LinearEncoder<T>),
    Mlp(MlpNetwork<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projector<T> {
    Identity,
    InverseDistance(InverseDistanceProjector<T>),
    Mlp(MlpNetwork<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub encoder: Encoder<T>,
    pub projector: Projector<T>,
    /// Whether inverse-distance patterns receive gradient updates.
    pub train_patterns: bool,
}

/// Outputs of every layer for one input, ordered input to output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations<T> {
    pub layers: Vec<Array1<T>>,
    pub names: Vec<String>,
    /// Index of the encoder output in `layers`.
    pub embedding: usize,
}

impl<T: Scalar> LayerActivations<T> {
    pub fn output(&self) -> &Array1<T> {
        self.layers.last().unwrap()
    }
}

/// A named contiguous block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Gradient of a loss with respect to every parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub flat: Vec<T>,
    pub layout: Vec<ParamBlock>,
}

impl<T: Scalar> Gradient<T> {
    pub fn block(&self, name: &str) -> Option<&[T]> {
        self.layout.iter().find(|b| b.name == name).map(|b| &self.flat[b.range()])
    }

    pub fn max_abs(&self) -> T {
        self.flat.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

enum EncoderTrace<T> {
    Linear(Array2<T>),
    Mlp(mlp::MlpTrace<T>),
}

enum ProjectorTrace<T> {
    Identity,
    InverseDistance(idp::IdpTrace<T>),
    Mlp(mlp::MlpTrace<T>),
}

struct Trace<T> {
    encoder: EncoderTrace<T>,
    projector: ProjectorTrace<T>,
}

impl<T: Scalar> Trace<T> {
    fn embedding(&self) -> &Array2<T> {
        match &self.encoder {
            EncoderTrace::Linear(z) => z,
            EncoderTrace::Mlp(t) => t.outputs.last().unwrap(),
        }
    }

    fn output(&self) -> &Array2<T> {
        match &self.projector {
            ProjectorTrace::Identity => self.embedding(),
            ProjectorTrace::InverseDistance(t) => &t.out,
            ProjectorTrace::Mlp(t) => t.outputs.last().unwrap(),
        }
    }
}

impl<T: Scalar> Model<T> {
    pub fn input_dim(&self) -> usize {
        match &self.encoder {
            Encoder::Linear(e) => e.input_dim(),
            Encoder::Mlp(m) => m.input_dim(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        match &self.encoder {
            Encoder::Linear(e) => e.output_dim(),
            Encoder::Mlp(m) => m.output_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.projector {
            Projector::Identity => self.embed_dim(),
            Projector::InverseDistance(p) => p.num_classes,
            Projector::Mlp(m) => m.output_dim(),
        }
    }

    /// Parameter blocks in flat order: encoder first, then projector.
    pub fn layout(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            blocks.push(ParamBlock { name, shape, offset });
            offset += len;
        };
        match &self.encoder {
            Encoder::Linear(e) => push("encoder.weight".into(), e.weight.shape().to_vec()),
            Encoder::Mlp(m) => {
                for (i, l) in m.layers.iter().enumerate() {
                    push(format!("encoder.{i}.weight"), l.weight.shape().to_vec());
                    push(format!("encoder.{i}.bias"), vec![l.bias.len()]);
                }
            }
        }
        match &self.projector {
            Projector::Identity => {}
            Projector::InverseDistance(p) => {
                if self.train_patterns {
                    push("projector.patterns".into(), p.patterns.shape().to_vec());
                }
            }
            Projector::Mlp(m) => {
                for (i, l) in m.layers.iter().enumerate() {
                    push(format!("projector.{i}.weight"), l.weight.shape().to_vec());
                    push(format!("projector.{i}.bias"), vec![l.bias.len()]);
                }
            }
        }
        blocks
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(ParamBlock::len).sum()
    }

    fn param_arrays(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        match &self.encoder {
            Encoder::Linear(e) => out.push(e.weight.as_slice().unwrap()),
            Encoder::Mlp(m) => {
                for l in &m.layers {
                    out.push(l.weight.as_slice().unwrap());
                    out.push(l.bias.as_slice().unwrap());
                }
            }
        }
        match &self.projector {
            Projector::Identity => {}
            Projector::InverseDistance(p) => {
                if self.train_patterns {
                    out.push(p.patterns.as_slice().unwrap());
                }
            }
            Projector::Mlp(m) => {
                for l in &m.layers {
                    out.push(l.weight.as_slice().unwrap());
                    out.push(l.bias.as_slice().unwrap());
                }
            }
        }
        out
    }

    fn param_arrays_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        match &mut self.encoder {
            Encoder::Linear(e) => out.push(e.weight.as_slice_mut().unwrap()),
            Encoder::Mlp(m) => {
                for l in &mut m.layers {
                    out.push(l.weight.as_slice_mut().unwrap());
                    out.push(l.bias.as_slice_mut().unwrap());
                }
            }
        }
        let train_patterns = self.train_patterns;
        match &mut self.projector {
            Projector::Identity => {}
            Projector::InverseDistance(p) => {
                if train_patterns {
                    out.push(p.patterns.as_slice_mut().unwrap());
                }
            }
            Projector::Mlp(m) => {
                for l in &mut m.layers {
                    out.push(l.weight.as_slice_mut().unwrap());
                    out.push(l.bias.as_slice_mut().unwrap());
                }
            }
        }
        out
    }

    pub fn flat_params(&self) -> Vec<T> {
        self.param_arrays().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            bail!(Input, "expected {} parameters, got {}", self.num_params(), flat.len());
        }
        let mut offset = 0;
        for block in self.param_arrays_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Applies `f(param, index)` to every trainable scalar in flat order.
    pub fn update_params(&mut self, mut f: impl FnMut(usize, &mut T)) {
        let mut idx = 0;
        for block in self.param_arrays_mut() {
            for v in block.iter_mut() {
                f(idx, v);
                idx += 1;
            }
        }
    }

    fn check_batch(&self, xs: &ArrayView2<'_, T>) -> Result<()> {
        if xs.ncols() != self.input_dim() {
            bail!(Input, "model expects {} input coordinates, got {}", self.input_dim(), xs.ncols());
        }
        Ok(())
    }

    fn trace(&self, xs: ArrayView2<'_, T>) -> Trace<T> {
        let encoder = match &self.encoder {
            Encoder::Linear(e) => EncoderTrace::Linear(e.forward_batch(xs)),
            Encoder::Mlp(m) => EncoderTrace::Mlp(m.forward_batch(xs)),
        };
        let z = match &encoder {
            EncoderTrace::Linear(z) => z.view(),
            EncoderTrace::Mlp(t) => t.outputs.last().unwrap().view(),
        };
        let projector = match &self.projector {
            Projector::Identity => ProjectorTrace::Identity,
            Projector::InverseDistance(p) => ProjectorTrace::InverseDistance(p.forward_batch(z)),
            Projector::Mlp(m) => ProjectorTrace::Mlp(m.forward_batch(z)),
        };
        Trace { encoder, projector }
    }

    /// Encoder outputs for a `b x d` batch.
    pub fn embed(&self, xs: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_batch(&xs)?;
        Ok(match &self.encoder {
            Encoder::Linear(e) => e.forward_batch(xs),
            Encoder::Mlp(m) => m.forward_batch(xs).outputs.pop().unwrap(),
        })
    }

    /// Network outputs for a `b x d` batch.
    pub fn predict(&self, xs: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_batch(&xs)?;
        Ok(self.trace(xs).output().clone())
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        match &self.encoder {
            Encoder::Linear(_) => names.push("embedding".to_string()),
            Encoder::Mlp(m) => {
                for i in 0..m.layers.len() - 1 {
                    names.push(format!("encoder.{i}"));
                }
                names.push("embedding".to_string());
            }
        }
        match &self.projector {
            Projector::Identity | Projector::InverseDistance(_) => names.push("output".to_string()),
            Projector::Mlp(m) => {
                for i in 0..m.layers.len() - 1 {
                    names.push(format!("projector.{i}"));
                }
                names.push("output".to_string());
            }
        }
        names
    }

    pub fn embedding_index(&self) -> usize {
        match &self.encoder {
            Encoder::Linear(_) => 0,
            Encoder::Mlp(m) => m.layers.len() - 1,
        }
    }

    /// Every layer's output for a batch, ordered input to output.
    pub fn forward_layers(&self, xs: ArrayView2<'_, T>) -> Result<Vec<Array2<T>>> {
        self.check_batch(&xs)?;
        let trace = self.trace(xs);
        let mut layers = match trace.encoder {
            EncoderTrace::Linear(z) => vec![z],
            EncoderTrace::Mlp(t) => t.outputs,
        };
        match trace.projector {
            ProjectorTrace::Identity => {
                let z = layers.last().unwrap().clone();
                layers.push(z);
            }
            ProjectorTrace::InverseDistance(t) => layers.push(t.out),
            ProjectorTrace::Mlp(t) => layers.extend(t.outputs),
        }
        Ok(layers)
    }

    /// Single-input forward pass capturing every layer.
    pub fn forward(&self, x: ArrayView1<'_, T>) -> Result<LayerActivations<T>> {
        let layers = self.forward_layers(x.insert_axis(Axis(0)))?;
        Ok(LayerActivations {
            layers: layers.into_iter().map(|l| l.row(0).to_owned()).collect(),
            names: self.layer_names(),
            embedding: self.embedding_index(),
        })
    }

    /// Gradient of `sum_b w_b |f(x_b) - y_b|^2` given `dL/dout` already
    /// formed by the caller.
    fn backward_from(&self, xs: ArrayView2<'_, T>, trace: &Trace<T>, grad_out: ArrayView2<'_, T>) -> Vec<T> {
        let z = trace.embedding().view();
        let mut proj_grads: Vec<Array2<T>> = Vec::new();
        let mut proj_bias: Vec<Array1<T>> = Vec::new();
        let grad_z: Array2<T> = match (&self.projector, &trace.projector) {
            (Projector::Identity, _) => grad_out.to_owned(),
            (Projector::InverseDistance(p), ProjectorTrace::InverseDistance(t)) => {
                let (gz, gv) = p.backward_batch(z, t, grad_out, self.train_patterns);
                if let Some(gv) = gv {
                    proj_grads.push(gv);
                }
                gz
            }
            (Projector::Mlp(m), ProjectorTrace::Mlp(t)) => {
                let (grads, gz) = m.backward_batch(t, grad_out);
                for (w, b) in grads {
                    proj_grads.push(w);
                    proj_bias.push(b);
                }
                gz
            }
            _ => unreachable!("trace matches projector"),
        };

        let mut flat = Vec::with_capacity(self.num_params());
        match (&self.encoder, &trace.encoder) {
            (Encoder::Linear(e), _) => {
                let gw = e.weight_grad(xs, grad_z.view());
                flat.extend(gw.iter().copied());
            }
            (Encoder::Mlp(m), EncoderTrace::Mlp(t)) => {
                let (grads, _) = m.backward_batch(t, grad_z.view());
                for (w, b) in grads {
                    flat.extend(w.iter().copied());
                    flat.extend(b.iter().copied());
                }
            }
            _ => unreachable!("trace matches encoder"),
        }
        match &self.projector {
            Projector::Mlp(_) => {
                for (w, b) in proj_grads.iter().zip(&proj_bias) {
                    flat.extend(w.iter().copied());
                    flat.extend(b.iter().copied());
                }
            }
            _ => {
                for w in &proj_grads {
                    flat.extend(w.iter().copied());
                }
            }
        }
        flat
    }

    /// Mean squared error over the batch and its gradient.
    pub fn loss_and_grad(&self, xs: ArrayView2<'_, T>, ys: ArrayView2<'_, T>) -> Result<(T, Gradient<T>)> {
        self.check_batch(&xs)?;
        if ys.nrows() != xs.nrows() || ys.ncols() != self.output_dim() {
            bail!(Input, "targets must be {} x {}", xs.nrows(), self.output_dim());
        }
        if xs.nrows() == 0 {
            bail!(Input, "empty batch");
        }
        let trace = self.trace(xs);
        let diff = trace.output() - &ys;
        let b = T::of(xs.nrows() as f64);
        let loss = diff.iter().map(|v| *v * *v).sum::<T>() / b;
        let grad_out = diff.mapv(|v| T::of(2.0) * v / b);
        let flat = self.backward_from(xs, &trace, grad_out.view());
        Ok((loss, Gradient { flat, layout: self.layout() }))
    }
}

/// Gradient of `|f(x) - y|^2` for one sample.
pub fn backward<T: Scalar>(model: &Model<T>, x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> Result<Gradient<T>> {
    let (_, g) = model.loss_and_grad(x.insert_axis(Axis(0)), y.insert_axis(Axis(0)))?;
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSpec {
    Linear,
    Mlp {
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProjectorSpec {
    Identity,
    InverseDistance {
        patterns: usize,
    },
    Mlp {
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
}

/// Architecture description consumed by [`init_params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub projector: ProjectorSpec,
    /// Embedding width; `None` means the input dimension.
    pub embed_dim: Option<usize>,
    pub train_patterns: bool,
    pub epsilon: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            encoder: EncoderSpec::Linear,
            projector: ProjectorSpec::InverseDistance { patterns: 1024 },
            embed_dim: None,
            train_patterns: true,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

fn gaussian_matrix<T: Scalar>(rng: &mut crate::rng::Rng, rows: usize, cols: usize, sd: f64) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| T::of(sd * rng.sample::<f64, _>(StandardNormal)))
}

fn init_mlp<T: Scalar>(rng: &mut crate::rng::Rng, sizes: &[usize], activation: Activation) -> Result<MlpNetwork<T>> {
    let layers = sizes
        .windows(2)
        .map(|w| Dense {
            weight: gaussian_matrix(rng, w[1], w[0], 1.0 / (w[0] as f64).sqrt()),
            bias: Array1::zeros(w[1]),
        })
        .collect();
    MlpNetwork::new(layers, activation, false)
}

/// Fresh parameters for `spec` on `input_dim`-dimensional inputs and
/// `num_classes` outputs.
///
/// Linear encoder weights are `N(0, 1/d)`; patterns are standard Gaussian;
/// pattern labels are uniform over the classes; MLP weights are Gaussian
/// scaled by `1/sqrt(fan_in)` with zero biases.
pub fn init_params<T: Scalar>(spec: &ModelSpec, input_dim: usize, num_classes: usize, seed: u64) -> Result<Model<T>> {
    if input_dim == 0 || num_classes == 0 {
        bail!(Config, "model dimensions must be positive");
    }
    let embed = spec.embed_dim.unwrap_or(input_dim);
    if embed == 0 {
        bail!(Config, "embedding width must be positive");
    }
    let mut rng = rng_at(seed, &[stream::INIT, 0]);
    let encoder = match &spec.encoder {
        EncoderSpec::Linear => Encoder::Linear(LinearEncoder::new(gaussian_matrix(
            &mut rng,
            embed,
            input_dim,
            1.0 / (input_dim as f64).sqrt(),
        ))),
        EncoderSpec::Mlp { hidden, activation } => {
            let sizes: Vec<usize> = std::iter::once(input_dim).chain(hidden.iter().copied()).chain([embed]).collect();
            Encoder::Mlp(init_mlp(&mut rng, &sizes, *activation)?)
        }
    };
    let mut rng = rng_at(seed, &[stream::INIT, 1]);
    let projector = match &spec.projector {
        ProjectorSpec::Identity => {
            if embed != num_classes {
                bail!(Config, "identity projector needs embedding width {embed} to equal class count {num_classes}");
            }
            Projector::Identity
        }
        ProjectorSpec::InverseDistance { patterns } => {
            if *patterns == 0 {
                bail!(Config, "inverse-distance projector needs at least one pattern");
            }
            let v = gaussian_matrix(&mut rng, *patterns, embed, 1.0);
            let mut lrng = rng_at(seed, &[stream::INIT, 2]);
            let labels = (0..*patterns).map(|_| lrng.random_range(0..num_classes)).collect();
            Projector::InverseDistance(InverseDistanceProjector::new(v, labels, num_classes, T::of(spec.epsilon))?)
        }
        ProjectorSpec::Mlp { hidden, activation } => {
            let sizes: Vec<usize> = std::iter::once(embed).chain(hidden.iter().copied()).chain([num_classes]).collect();
            Projector::Mlp(init_mlp(&mut rng, &sizes, *activation)?)
        }
    };
    Ok(Model { encoder, projector, train_patterns: spec.train_patterns })
}
