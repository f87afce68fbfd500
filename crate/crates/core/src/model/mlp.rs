use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the pre-activation value.
    #[inline]
    pub fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                T::one() - t * t
            }
            Activation::Identity => T::one(),
        }
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Identity,
            _ => return None,
        })
    }
}

/// Fully connected layer `y = W x + b`, `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Affine layers with `activation` between them. The last layer is linear
/// unless `activate_output` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork<T> {
    pub layers: Vec<Dense<T>>,
    pub activation: Activation,
    pub activate_output: bool,
}

pub(crate) struct MlpTrace<T> {
    /// Input to each layer; `inputs[0]` is the network input.
    pub inputs: Vec<Array2<T>>,
    pub pre: Vec<Array2<T>>,
    /// Post-activation output of each layer.
    pub outputs: Vec<Array2<T>>,
}

impl<T: Scalar> MlpNetwork<T> {
    pub fn new(layers: Vec<Dense<T>>, activation: Activation, activate_output: bool) -> Result<Self> {
        if layers.is_empty() {
            bail!(Input, "an MLP needs at least one layer");
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.nrows() {
                bail!(Input, "layer {i}: bias length {} vs {} outputs", l.bias.len(), l.weight.nrows());
            }
            if i > 0 && layers[i - 1].weight.nrows() != l.weight.ncols() {
                bail!(
                    Input,
                    "layer {i} expects {} inputs but previous layer emits {}",
                    l.weight.ncols(),
                    layers[i - 1].weight.nrows()
                );
            }
        }
        Ok(Self { layers, activation, activate_output })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.weight.nrows())).collect()
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 < self.layers.len() || self.activate_output {
            self.activation
        } else {
            Activation::Identity
        }
    }

    pub(crate) fn forward_batch(&self, xs: ArrayView2<'_, T>) -> MlpTrace<T> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = xs.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let h = current.dot(&layer.weight.t()) + &layer.bias;
            let act = self.activation_for(i);
            let a = h.mapv(|v| act.apply(v));
            inputs.push(current);
            pre.push(h);
            current = a.clone();
            outputs.push(a);
        }
        MlpTrace { inputs, pre, outputs }
    }

    /// Returns per-layer `(dW, db)` and `dL/dx`.
    pub(crate) fn backward_batch(
        &self,
        trace: &MlpTrace<T>,
        grad_out: ArrayView2<'_, T>,
    ) -> (Vec<(Array2<T>, Array1<T>)>, Array2<T>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            let act = self.activation_for(i);
            let mut dh = upstream;
            if act != Activation::Identity {
                dh.zip_mut_with(&trace.pre[i], |g, &p| *g *= act.derivative(p));
            }
            let dw = dh.t().dot(&trace.inputs[i]);
            let db = dh.sum_axis(Axis(0));
            upstream = dh.dot(&self.layers[i].weight);
            grads.push((dw, db));
        }
        grads.reverse();
        (grads, upstream)
    }

    /// Outputs of every layer for one input, first layer first.
    pub fn forward(&self, x: ArrayView1<'_, T>) -> Result<Vec<Array1<T>>> {
        if x.len() != self.input_dim() {
            bail!(Input, "MLP expects {} inputs, got {}", self.input_dim(), x.len());
        }
        let trace = self.forward_batch(x.insert_axis(Axis(0)));
        Ok(trace.outputs.into_iter().map(|o| o.row(0).to_owned()).collect())
    }
}
