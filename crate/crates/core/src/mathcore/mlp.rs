//! Small dense feed-forward networks with hand-written reverse mode.
//!
//! Weights are stored row-major as `outputs x inputs`. All batch routines
//! take and return flat row-major matrices (`batch x width`).

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    LeakyRelu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::LeakyRelu => {
                if pre >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }
}

/// Multilayer perceptron: leaky-rectifier hidden layers, linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    /// L2 coefficient applied to weight matrices (not biases): `l2 * sum(w^2)`.
    pub weight_decay: f64,
}

/// Gradients with the same layout as [`Mlp`] parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Flattened in the same order as [`Mlp::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.bias)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Activations recorded by a batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    /// `inputs[l]` is the input to layer `l`; the last entry is the network output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("non-empty cache")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Mlp {
    /// Random initialisation: He-normal hidden layers, Glorot-normal output layer.
    pub fn new(sizes: &[usize], weight_decay: f64, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes, weight_decay)?;
        let last = net.layers.len() - 1;
        for (idx, layer) in net.layers.iter_mut().enumerate() {
            let sd = if idx == last {
                (2.0 / (layer.inputs + layer.outputs) as f64).sqrt()
            } else {
                (2.0 / layer.inputs as f64).sqrt()
            };
            layer
                .weights
                .iter_mut()
                .for_each(|w| *w = sd * rng.normal());
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], weight_decay: f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n {
                    Activation::Linear
                } else {
                    Activation::LeakyRelu
                };
                Layer::zeros(w[0], w[1], act)
            })
            .collect();
        Ok(Self {
            layers,
            weight_decay,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.inputs == b.inputs && a.outputs == b.outputs && a.activation == b.activation
            })
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(input, 1)
    }

    /// Forward pass over `batch` rows without recording activations.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(inputs, batch)?;
        let mut x = inputs.to_vec();
        for layer in &self.layers {
            let mut y = affine(layer, &x, batch);
            y.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            x = y;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        self.check_input(inputs, batch)?;
        let mut cache = ForwardCache {
            batch,
            inputs: vec![inputs.to_vec()],
            pre: Vec::with_capacity(self.layers.len()),
        };
        for layer in &self.layers {
            let pre = affine(layer, cache.inputs.last().unwrap(), batch);
            let post = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            cache.pre.push(pre);
            cache.inputs.push(post);
        }
        Ok(cache)
    }

    /// Reverse pass: gradient of `sum(output * upstream)` with respect to the
    /// parameters, accumulated over the batch. No L2 term.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<MlpGrads> {
        let batch = cache.batch;
        if upstream.len() != batch * self.output_dim() {
            return Err(Error::Shape {
                expected: batch * self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta_out = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[l];
            let x = &cache.inputs[l];
            let (nin, nout) = (layer.inputs, layer.outputs);
            let mut d_pre = delta_out;
            for (d, &p) in d_pre.iter_mut().zip(pre) {
                *d *= layer.activation.derivative(p);
            }
            let gw = &mut grads.weights[l];
            let gb = &mut grads.bias[l];
            for b in 0..batch {
                let drow = &d_pre[b * nout..(b + 1) * nout];
                let xrow = &x[b * nin..(b + 1) * nin];
                for (o, &d) in drow.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let grow = &mut gw[o * nin..(o + 1) * nin];
                    for (g, &xi) in grow.iter_mut().zip(xrow) {
                        *g += d * xi;
                    }
                }
            }
            if l > 0 {
                let mut d_in = vec![0.0; batch * nin];
                for b in 0..batch {
                    let drow = &d_pre[b * nout..(b + 1) * nout];
                    let dx = &mut d_in[b * nin..(b + 1) * nin];
                    for (o, &d) in drow.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let wrow = &layer.weights[o * nin..(o + 1) * nin];
                        for (g, &w) in dx.iter_mut().zip(wrow) {
                            *g += d * w;
                        }
                    }
                }
                delta_out = d_in;
            } else {
                delta_out = Vec::new();
            }
        }
        Ok(grads)
    }

    /// Gradient of `output . upstream + l2 * sum(w^2)` for a single input.
    pub fn gradients(&self, input: &[f64], upstream: &[f64]) -> Result<MlpGrads> {
        let cache = self.forward_cached(input, 1)?;
        let mut g = self.backward(&cache, upstream)?;
        self.add_l2_gradient(&mut g);
        Ok(g)
    }

    pub fn l2_penalty(&self) -> f64 {
        self.weight_decay
            * self
                .layers
                .iter()
                .flat_map(|l| l.weights.iter())
                .map(|w| w * w)
                .sum::<f64>()
    }

    pub fn add_l2_gradient(&self, grads: &mut MlpGrads) {
        if self.weight_decay == 0.0 {
            return;
        }
        for (g, layer) in grads.weights.iter_mut().zip(&self.layers) {
            for (gi, w) in g.iter_mut().zip(&layer.weights) {
                *gi += 2.0 * self.weight_decay * w;
            }
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// `params -= lr * grads`.
    pub fn apply_gradient(&mut self, grads: &MlpGrads, lr: f64) {
        for ((l, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.bias) {
            l.weights.iter_mut().zip(gw).for_each(|(w, g)| *w -= lr * g);
            l.bias.iter_mut().zip(gb).for_each(|(b, g)| *b -= lr * g);
        }
    }

    /// `self <- rho * source + (1 - rho) * self`, elementwise.
    pub fn blend_from(&mut self, source: &Mlp, rho: f64) {
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.weights
                .iter_mut()
                .zip(&s.weights)
                .for_each(|(a, b)| *a = rho * b + (1.0 - rho) * *a);
            t.bias
                .iter_mut()
                .zip(&s.bias)
                .for_each(|(a, b)| *a = rho * b + (1.0 - rho) * *a);
        }
    }

    fn check_input(&self, inputs: &[f64], batch: usize) -> Result<()> {
        let expected = batch * self.input_dim();
        if inputs.len() != expected {
            return Err(Error::Shape {
                expected,
                got: inputs.len(),
            });
        }
        Ok(())
    }
}

fn affine(layer: &Layer, x: &[f64], batch: usize) -> Vec<f64> {
    let (nin, nout) = (layer.inputs, layer.outputs);
    let mut y = vec![0.0; batch * nout];
    for b in 0..batch {
        let xrow = &x[b * nin..(b + 1) * nin];
        let yrow = &mut y[b * nout..(b + 1) * nout];
        for (o, yo) in yrow.iter_mut().enumerate() {
            let wrow = &layer.weights[o * nin..(o + 1) * nin];
            let mut acc = layer.bias[o];
            for (w, xi) in wrow.iter().zip(xrow) {
                acc += w * xi;
            }
            *yo = acc;
        }
    }
    y
}
