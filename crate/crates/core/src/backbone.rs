//! Fully-connected feature extractor with exact reverse-mode gradients.
//!
//! Hidden layers apply the configured activation; the last layer is affine so
//! the features can take any sign before they reach the split nodes.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    Logistic,
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Logistic => math::logistic(z),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Logistic => a * (1.0 - a),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Affine map `W x + b` with `W` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs {
            return Err(Error::Shape {
                what: "layer weights",
                expected: inputs * outputs,
                found: weights.len(),
            });
        }
        if bias.len() != outputs {
            return Err(Error::Shape {
                what: "layer bias",
                expected: outputs,
                found: bias.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::numeric("layer parameters must be finite"));
        }
        Ok(DenseLayer {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    layers: Vec<DenseLayer>,
    activation: Activation,
}

/// Intermediates of one forward pass, consumed by [`BackboneParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    // inputs[l] is the input of layer l; pre[l] its pre-activation.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn features(&self) -> &[f64] {
        &self.output
    }

    pub fn into_features(self) -> Vec<f64> {
        self.output
    }
}

/// Gradients congruent with [`BackboneParams`]: one `(weights, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGradients {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl BackboneGradients {
    pub fn zeros_like(params: &BackboneParams) -> Self {
        BackboneGradients {
            layers: params
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn layer(&self, index: usize) -> (&[f64], &[f64]) {
        let (w, b) = &self.layers[index];
        (w, b)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &BackboneGradients, scale: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, o)| *a += scale * o);
            b.iter_mut().zip(ob).for_each(|(a, o)| *a += scale * o);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    /// All entries in the same order as [`BackboneParams::flat`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b).copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.iter().chain(b).all(|v| v.is_finite()))
    }
}

impl BackboneParams {
    pub fn new(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("backbone needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape {
                    what: "consecutive layers",
                    expected: pair[0].outputs,
                    found: pair[1].inputs,
                });
            }
        }
        Ok(BackboneParams { layers, activation })
    }

    /// Glorot-uniform weights in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases. `sizes` lists every layer width including input and output.
    pub fn init(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config("layer sizes need an input, an output and no zero widths"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = math::sqrt(6.0 / (fan_in + fan_out) as f64);
                let weights = (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect();
                DenseLayer::new(fan_in, fan_out, weights, vec![0.0; fan_out])
            })
            .collect::<Result<Vec<_>>>()?;
        BackboneParams::new(layers, activation)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Every parameter, layer by layer, weights (row-major) before biases.
    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    /// Mutable access to the parameter at position `index` of [`Self::flat`].
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                what: "backbone input",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&current);
            let a = if l == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            inputs.push(core::mem::replace(&mut current, a));
            pre.push(z);
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: current,
        })
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(ForwardCache::into_features)
    }

    /// Gradient of a scalar `L` with respect to every parameter, given
    /// `upstream = dL/d features` and the cache of the matching forward pass.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<BackboneGradients> {
        if cache.inputs.len() != self.layers.len()
            || self.layers.iter().zip(&cache.inputs).any(|(l, i)| l.inputs != i.len())
        {
            return Err(Error::Shape {
                what: "forward cache",
                expected: self.layers.len(),
                found: cache.inputs.len(),
            });
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape {
                what: "upstream gradient",
                expected: self.output_dim(),
                found: upstream.len(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        // delta = dL/d(pre-activation of the current layer)
        let mut delta = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let mut dw = vec![0.0; layer.weights.len()];
            for (row, &d) in dw.chunks_exact_mut(layer.inputs).zip(&delta) {
                row.iter_mut().zip(input).for_each(|(g, &v)| *g = d * v);
            }
            let db = delta.clone();
            if l > 0 {
                let mut back = vec![0.0; layer.inputs];
                for (row, &d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                    back.iter_mut().zip(row).for_each(|(b, &w)| *b += w * d);
                }
                // `input` is the activation output of layer l - 1.
                let z_prev = &cache.pre[l - 1];
                delta = back
                    .iter()
                    .zip(z_prev)
                    .zip(input)
                    .map(|((b, &z), &a)| b * self.activation.derivative(z, a))
                    .collect();
            }
            grads.push((dw, db));
        }
        grads.reverse();
        Ok(BackboneGradients { layers: grads })
    }

    /// Gradient ascent step `params += lr * grads`. Refused, leaving the
    /// parameters untouched, when any gradient entry is not finite.
    pub fn sgd_step(&mut self, grads: &BackboneGradients, learning_rate: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || self
                .layers
                .iter()
                .zip(&grads.layers)
                .any(|(l, (w, b))| l.weights.len() != w.len() || l.bias.len() != b.len())
        {
            return Err(Error::Shape {
                what: "gradients",
                expected: self.num_params(),
                found: grads.layers.iter().map(|(w, b)| w.len() + b.len()).sum(),
            });
        }
        if !grads.is_finite() || !learning_rate.is_finite() {
            return Err(Error::numeric("non-finite gradient; step refused"));
        }
        for (layer, (w, b)) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.iter_mut().zip(w).for_each(|(p, g)| *p += learning_rate * g);
            layer.bias.iter_mut().zip(b).for_each(|(p, g)| *p += learning_rate * g);
        }
        Ok(())
    }
}
