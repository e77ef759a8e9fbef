//! Dense multilayer perceptrons with exact backpropagation.
//!
//! Batches are flat row-major buffers of shape `(batch, dim)`. Applying the same
//! network to every row is what makes the per-point networks "shared".

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Softmax,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Softmax => "softmax",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "identity" => Activation::Identity,
            "softmax" => Activation::Softmax,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = (1.0 / in_dim as f64).sqrt();
        let mut layer = Dense::zeros(in_dim, out_dim, activation);
        for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.gen_range(-bound..=bound);
        }
        layer
    }

    fn forward_into(&self, x: &[f64], batch: usize, out: &mut [f64]) {
        let (i_dim, o_dim) = (self.in_dim, self.out_dim);
        for n in 0..batch {
            let xr = &x[n * i_dim..(n + 1) * i_dim];
            let yr = &mut out[n * o_dim..(n + 1) * o_dim];
            for (o, y) in yr.iter_mut().enumerate() {
                let wr = &self.weight[o * i_dim..(o + 1) * i_dim];
                *y = self.bias[o] + wr.iter().zip(xr).map(|(w, x)| w * x).sum::<f64>();
            }
            match self.activation {
                Activation::Relu => yr.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Tanh => yr.iter_mut().for_each(|v| *v = v.tanh()),
                Activation::Identity => {}
                Activation::Softmax => softmax_in_place(yr),
            }
        }
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// A feed-forward chain of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations recorded by a forward pass; `outputs[0]` is the input and
/// `outputs[l + 1]` the post-activation output of layer `l`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub batch: usize,
    pub outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("trace holds the input at least")
    }
}

/// Parameter gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self
            .weights
            .iter_mut()
            .zip(&other.weights)
            .chain(self.biases.iter_mut().zip(&other.biases))
        {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Flat view in the order of [`Mlp::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|g| g.is_finite()))
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        for l in &layers {
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::InvalidArgument("layer parameter shape mismatch".into()));
            }
        }
        Ok(Mlp { layers })
    }

    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the last layer `output`.
    pub fn new<R: Rng>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let act = if l + 1 == n { output } else { hidden };
                Dense::init(dims[l], dims[l + 1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Zeroes the last layer's parameters, so a softmax output starts uniform.
    pub fn zero_last_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Forward pass over a `(batch, input_dim)` buffer, keeping every activation.
    pub fn forward(&self, x: &[f64], batch: usize) -> Result<Trace> {
        if x.len() != batch * self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: batch * self.input_dim(),
                got: x.len(),
            });
        }
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.to_vec());
        for l in &self.layers {
            let mut out = vec![0.0; batch * l.out_dim];
            l.forward_into(outputs.last().unwrap(), batch, &mut out);
            outputs.push(out);
        }
        Ok(Trace { batch, outputs })
    }

    /// Output only, for a single row.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x, 1)?.outputs.pop().unwrap())
    }

    /// Backpropagates `upstream` (dL/d output, shape `(batch, output_dim)`) and
    /// returns parameter gradients and dL/d input.
    ///
    /// ReLU uses the subgradient 0 at 0.
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> (Gradients, Vec<f64>) {
        let batch = trace.batch;
        assert_eq!(upstream.len(), batch * self.output_dim(), "upstream gradient shape");
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let y = &trace.outputs[li + 1];
            let x = &trace.outputs[li];
            let (i_dim, o_dim) = (l.in_dim, l.out_dim);
            // through the activation: delta becomes dL/d pre-activation
            match l.activation {
                Activation::Relu => {
                    for (d, &yv) in delta.iter_mut().zip(y) {
                        if yv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Activation::Tanh => {
                    for (d, &yv) in delta.iter_mut().zip(y) {
                        *d *= 1.0 - yv * yv;
                    }
                }
                Activation::Identity => {}
                Activation::Softmax => {
                    for n in 0..batch {
                        let yr = &y[n * o_dim..(n + 1) * o_dim];
                        let dr = &mut delta[n * o_dim..(n + 1) * o_dim];
                        let dot: f64 = yr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                        for (d, &s) in dr.iter_mut().zip(yr) {
                            *d = s * (*d - dot);
                        }
                    }
                }
            }
            let gw = &mut grads.weights[li];
            let gb = &mut grads.biases[li];
            let mut dx = vec![0.0; batch * i_dim];
            for n in 0..batch {
                let xr = &x[n * i_dim..(n + 1) * i_dim];
                let dxr = &mut dx[n * i_dim..(n + 1) * i_dim];
                for o in 0..o_dim {
                    let g = delta[n * o_dim + o];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    let wr = &l.weight[o * i_dim..(o + 1) * i_dim];
                    let gwr = &mut gw[o * i_dim..(o + 1) * i_dim];
                    for i in 0..i_dim {
                        gwr[i] += g * xr[i];
                        dxr[i] += g * wr[i];
                    }
                }
            }
            delta = dx;
        }
        (grads, delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut l = Dense::zeros(3, 3, Activation::Identity);
        for i in 0..3 {
            l.weight[i * 3 + i] = 1.0;
        }
        let net = Mlp::from_layers(vec![l]).unwrap();
        assert_eq!(net.predict(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn softmax_values() {
        let mut row = [0.0, 0.0];
        softmax_in_place(&mut row);
        assert_eq!(row, [0.5, 0.5]);
        let mut row = [2f64.ln(), 0.0];
        softmax_in_place(&mut row);
        assert!((row[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((row[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Softmax, &mut rng);
        assert!(net.forward(&[0.0; 4], 1).is_err());
        let bad = vec![Dense::zeros(3, 4, Activation::Relu), Dense::zeros(5, 2, Activation::Identity)];
        assert!(Mlp::from_layers(bad).is_err());
    }

    #[test]
    fn linear_sum_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 2], Activation::Identity, Activation::Identity, &mut rng);
        let x = [0.5, -1.0, 2.0];
        let trace = net.forward(&x, 1).unwrap();
        let (g, _) = net.backward(&trace, &[1.0, 1.0]);
        assert_eq!(g.weights[0], vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert_eq!(g.biases[0], vec![1.0, 1.0]);
    }

    #[test]
    fn relu_at_zero_has_zero_subgradient() {
        let mut l = Dense::zeros(1, 1, Activation::Relu);
        l.weight[0] = 1.0;
        let net = Mlp::from_layers(vec![l]).unwrap();
        let trace = net.forward(&[0.0], 1).unwrap();
        let (g, dx) = net.backward(&trace, &[1.0]);
        assert_eq!(g.weights[0], vec![0.0]);
        assert_eq!(g.biases[0], vec![0.0]);
        assert_eq!(dx, vec![0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[4, 8, 3], Activation::Tanh, Activation::Softmax, &mut rng);
        let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t = net.forward(&x, 10).unwrap();
        for row in t.output().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[2, 5, 2], Activation::Relu, Activation::Identity, &mut rng);
        let mut other = Mlp::new(&[2, 5, 2], Activation::Relu, Activation::Identity, &mut rng);
        other.set_flat_params(&net.flat_params()).unwrap();
        assert_eq!(other, net);
    }
}
