use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NodeId, ParamLayout, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    Celu(f64),
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Celu(alpha) => tape.celu(x, alpha),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// One fully connected layer; `w` and `b` are offsets into the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub act: Activation,
}

impl Dense {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let y = tape.affine(x, self.w, self.b, self.n_in, self.n_out);
        self.act.apply(tape, y)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let bound = (6.0 / (self.n_in + self.n_out) as f64).sqrt();
        for p in &mut params[self.w..self.w + self.n_in * self.n_out] {
            *p = rng.random_range(-bound..=bound);
        }
        params[self.b..self.b + self.n_out].fill(0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Allocates layers `sizes[0] -> sizes[1] -> ...`; hidden layers use
    /// `hidden`, the last one `output`.
    pub fn new(layout: &mut ParamLayout, name: &str, sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense {
                w: layout.alloc(format!("{name}.{i}.weight"), &[w[1], w[0]]),
                b: layout.alloc(format!("{name}.{i}.bias"), &[w[1]]),
                n_in: w[0],
                n_out: w[1],
                act: if i == last { output } else { hidden },
            })
            .collect();
        Mlp { layers }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().unwrap().n_out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.n_out * (l.n_in + 1)).sum()
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        self.layers.iter().fold(x, |h, l| l.forward(tape, h))
    }

    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        for l in &self.layers {
            l.init(params, rng);
        }
    }
}
