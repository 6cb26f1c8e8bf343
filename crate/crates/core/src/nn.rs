//! Dense layers with hand-written adjoints.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

/// `y = W x + b` with `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = crate::math::sqrt(6.0 / (in_dim + out_dim) as f64);
        let weight = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect();
        Self { in_dim, out_dim, weight, bias: vec![0.0; out_dim] }
    }

    /// Square identity map with zero bias.
    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        for i in 0..dim {
            l.weight[i * dim + i] = 1.0;
        }
        l
    }

    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut s = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                s += w * xi;
            }
            *yo = s;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.out_dim];
        self.forward_into(x, &mut y);
        y
    }

    /// Accumulate parameter gradients into `grad` and add `dL/dx` into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: &mut [f64]) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim, self.out_dim)
    }
}

/// Perceptron with ReLU between layers and a linear final layer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
}

impl Mlp {
    /// `in -> hidden -> ... -> hidden -> out` with `hidden_layers` hidden layers.
    /// Hidden weights are Glorot-initialized, the output layer is zero.
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: usize,
        hidden_layers: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut d = in_dim;
        for _ in 0..hidden_layers {
            layers.push(Linear::glorot(d, hidden, rng));
            d = hidden;
        }
        layers.push(Linear::zeros(d, out_dim));
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpTrace) {
        let mut trace = MlpTrace { inputs: Vec::with_capacity(self.layers.len()) };
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&cur);
            if k != last {
                for v in &mut y {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            trace.inputs.push(core::mem::replace(&mut cur, y));
        }
        (cur, trace)
    }

    /// Returns `dL/dx` and accumulates parameter gradients into `grad`.
    pub fn backward(&self, trace: &MlpTrace, dy: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut upstream = dy.to_vec();
        for k in (0..self.layers.len()).rev() {
            let x = &trace.inputs[k];
            let mut dx = vec![0.0; x.len()];
            self.layers[k].backward(x, &upstream, &mut grad.layers[k], &mut dx);
            if k > 0 {
                // x is the ReLU output of layer k-1; zero where it was clamped.
                for (d, v) in dx.iter_mut().zip(x) {
                    if *v <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            upstream = dx;
        }
        upstream
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(Linear::zeros_like).collect() }
    }
}
