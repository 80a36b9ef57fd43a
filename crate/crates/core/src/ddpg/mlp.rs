//! Small dense networks with hand-written forward and backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OutputActivation {
    /// `scale * (1 + tanh(z)) / 2`, mapping onto `[0, scale]`.
    ScaledTanh {
        scale: f64,
    },
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    fn uniform<R: Rng>(in_dim: usize, out_dim: usize, bound: f64, rng: &mut R) -> Self {
        let mut d = Dense::zeros(in_dim, out_dim);
        for v in d.w.iter_mut().chain(d.b.iter_mut()) {
            *v = rng.gen_range(-bound..=bound);
        }
        d
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            out.push(self.b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: OutputActivation,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// Fan-in uniform initialization; the last layer uses `final_bound`.
    pub fn new<R: Rng>(
        dims: &[usize],
        output: OutputActivation,
        final_bound: f64,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = if i + 2 == dims.len() {
                    final_bound
                } else {
                    1.0 / (w[0] as f64).sqrt()
                };
                Dense::uniform(w[0], w[1], bound, rng)
            })
            .collect();
        Mlp { layers, output }
    }

    pub fn zeros(dims: &[usize], output: OutputActivation) -> Self {
        Mlp {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            output,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(x)?.0)
    }

    pub fn forward_tape(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let mut tape = Tape::default();
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.apply(&h, &mut z);
            tape.inputs.push(std::mem::take(&mut h));
            h = if i < last {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                match self.output {
                    OutputActivation::Linear => z.clone(),
                    OutputActivation::ScaledTanh { scale } => {
                        z.iter().map(|v| 0.5 * scale * (1.0 + v.tanh())).collect()
                    }
                }
            };
            tape.pre.push(z);
        }
        Ok((h, tape))
    }

    /// Backpropagates `grad_out` (dL/d output), adding parameter gradients into
    /// `grads` and returning dL/d input.
    pub fn backward(&self, tape: &Tape, grad_out: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let delta: Vec<f64> = match self.output {
            OutputActivation::Linear => grad_out.to_vec(),
            OutputActivation::ScaledTanh { scale } => grad_out
                .iter()
                .zip(&tape.pre[last])
                .map(|(g, z)| {
                    let t = z.tanh();
                    g * 0.5 * scale * (1.0 - t * t)
                })
                .collect(),
        };
        self.backward_pre(tape, delta, grads)
    }

    /// Pre-activation of the output layer from the recorded pass.
    pub fn output_pre(tape: &Tape) -> &[f64] {
        tape.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Like [`Mlp::backward`] but starting from dL/d(output pre-activation).
    pub fn backward_pre(&self, tape: &Tape, mut delta: Vec<f64>, grads: &mut Mlp) -> Vec<f64> {
        let last = self.layers.len() - 1;
        for i in (0..=last).rev() {
            let layer = &self.layers[i];
            let input = &tape.inputs[i];
            let g = &mut grads.layers[i];
            let mut prev = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.b[o] += d;
                let span = o * layer.in_dim..(o + 1) * layer.in_dim;
                for (gw, x) in g.w[span.clone()].iter_mut().zip(input) {
                    *gw += d * x;
                }
                for (p, w) in prev.iter_mut().zip(&layer.w[span]) {
                    *p += d * w;
                }
            }
            if i > 0 {
                for (p, z) in prev.iter_mut().zip(&tape.pre[i - 1]) {
                    if *z <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
            output: self.output,
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn scale(&mut self, k: f64) {
        self.params_mut().for_each(|p| *p *= k);
    }

    pub fn norm(&self) -> f64 {
        self.params().map(|p| p * p).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn soft_update(online: &Mlp, target: &mut Mlp, tau: f64) {
    assert!(tau > 0.0 && tau <= 1.0, "tau must lie in (0,1]");
    assert!(online.same_shape(target), "shape mismatch");
    if tau == 1.0 {
        target.clone_from(online);
        return;
    }
    for (t, o) in target.params_mut().zip(online.params()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

/// Stochastic gradient descent with momentum: `v <- m v - lr g; p <- p + v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgdm {
    pub learning_rate: f64,
    pub momentum: f64,
    pub velocity: Mlp,
}

impl Sgdm {
    pub fn new(net: &Mlp, learning_rate: f64, momentum: f64) -> Self {
        Sgdm {
            learning_rate,
            momentum,
            velocity: net.zeros_like(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Mlp) {
        let (lr, m) = (self.learning_rate, self.momentum);
        for ((p, v), g) in net
            .params_mut()
            .zip(self.velocity.params_mut())
            .zip(grads.params())
        {
            *v = m * *v - lr * g;
            *p += *v;
        }
    }
}
