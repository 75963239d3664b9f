//! Dense layers, Adam, and a small vector-valued reverse-mode tape.
//!
//! The tape records one node per vector operation (affine map, activation,
//! concatenation, gated mix, ...) so gradients can flow through the chain of
//! cluster-representation updates made during incremental clustering.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{LayerId, ModelParams};

/// Affine layer `y = W x + b`, weights stored input-major (`W[j * out + i]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform Glorot initialisation.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = self.bias.clone();
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let row = &self.weight[j * self.out_dim..(j + 1) * self.out_dim];
            for (yi, w) in y.iter_mut().zip(row) {
                *yi += xj * w;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx` when asked.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, need_dx: bool) -> Option<Vec<f64>> {
        for (gb, d) in grad.bias.iter_mut().zip(dy) {
            *gb += d;
        }
        let mut dx = need_dx.then(|| vec![0.0; self.in_dim]);
        for (j, &xj) in x.iter().enumerate() {
            let row = &self.weight[j * self.out_dim..(j + 1) * self.out_dim];
            if let Some(dx) = dx.as_mut() {
                dx[j] = row.iter().zip(dy).map(|(w, d)| w * d).sum();
            }
            if xj != 0.0 {
                let grow = &mut grad.weight[j * self.out_dim..(j + 1) * self.out_dim];
                for (g, d) in grow.iter_mut().zip(dy) {
                    *g += xj * d;
                }
            }
        }
        dx
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [&mut f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            **p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

pub type NodeId = usize;

#[derive(Debug)]
enum Op {
    Input,
    Affine { layer: LayerId, input: NodeId },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Mask { input: NodeId, mask: Vec<f64> },
    Concat(Vec<NodeId>),
    Hadamard(NodeId, NodeId),
    Sum(Vec<NodeId>),
    /// `gate * keep + (1 - gate) * incoming`, gate a scalar node.
    Mix {
        gate: NodeId,
        keep: NodeId,
        incoming: NodeId,
    },
}

/// Records vector operations against a fixed parameter set.
pub struct Tape<'p> {
    params: &'p ModelParams,
    values: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self {
            params,
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        self.values.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.values[id]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.values[id][0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input(&mut self, v: Vec<f64>) -> NodeId {
        self.push(v, Op::Input)
    }

    pub fn affine(&mut self, layer: LayerId, input: NodeId) -> NodeId {
        let v = self.params.layer(layer).forward(&self.values[input]);
        self.push(v, Op::Affine { layer, input })
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let v = self.values[input].iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(input))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let v = self.values[input].iter().map(|&x| logistic(x)).collect();
        self.push(v, Op::Sigmoid(input))
    }

    pub fn mask(&mut self, input: NodeId, mask: Vec<f64>) -> NodeId {
        let v = self.values[input]
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        self.push(v, Op::Mask { input, mask })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let v = parts
            .iter()
            .flat_map(|&p| self.values[p].iter().copied())
            .collect();
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a]
            .iter()
            .zip(&self.values[b])
            .map(|(x, y)| x * y)
            .collect();
        self.push(v, Op::Hadamard(a, b))
    }

    pub fn sum(&mut self, parts: &[NodeId]) -> NodeId {
        let mut v = vec![0.0; self.values[parts[0]].len()];
        for &p in parts {
            for (acc, x) in v.iter_mut().zip(&self.values[p]) {
                *acc += x;
            }
        }
        self.push(v, Op::Sum(parts.to_vec()))
    }

    pub fn mix(&mut self, gate: NodeId, keep: NodeId, incoming: NodeId) -> NodeId {
        let g = self.values[gate][0];
        let v = self.values[keep]
            .iter()
            .zip(&self.values[incoming])
            .map(|(k, x)| g * k + (1.0 - g) * x)
            .collect();
        self.push(v, Op::Mix {
            gate,
            keep,
            incoming,
        })
    }

    /// Back-propagates `seeds` (node, dL/dnode) and accumulates into `grads`.
    pub fn backward(&self, seeds: &[(NodeId, Vec<f64>)], grads: &mut ModelParams) {
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        let add = |adj: &mut Vec<Option<Vec<f64>>>, id: NodeId, d: &[f64]| match &mut adj[id] {
            Some(acc) => acc.iter_mut().zip(d).for_each(|(a, x)| *a += x),
            slot @ None => *slot = Some(d.to_vec()),
        };
        for (id, d) in seeds {
            add(&mut adj, *id, d);
        }
        for id in (0..self.values.len()).rev() {
            let Some(d) = adj[id].take() else { continue };
            match &self.ops[id] {
                Op::Input => {}
                Op::Affine { layer, input } => {
                    let need_dx = !matches!(self.ops[*input], Op::Input);
                    if let Some(dx) = self.params.layer(*layer).backward(
                        &self.values[*input],
                        &d,
                        grads.layer_mut(*layer),
                        need_dx,
                    ) {
                        add(&mut adj, *input, &dx);
                    }
                }
                Op::Tanh(input) => {
                    let dx: Vec<f64> = self.values[id]
                        .iter()
                        .zip(&d)
                        .map(|(y, g)| g * (1.0 - y * y))
                        .collect();
                    add(&mut adj, *input, &dx);
                }
                Op::Sigmoid(input) => {
                    let dx: Vec<f64> = self.values[id]
                        .iter()
                        .zip(&d)
                        .map(|(y, g)| g * y * (1.0 - y))
                        .collect();
                    add(&mut adj, *input, &dx);
                }
                Op::Mask { input, mask } => {
                    let dx: Vec<f64> = d.iter().zip(mask).map(|(g, m)| g * m).collect();
                    add(&mut adj, *input, &dx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.values[p].len();
                        add(&mut adj, p, &d[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Hadamard(a, b) => {
                    let da: Vec<f64> = d.iter().zip(&self.values[*b]).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = d.iter().zip(&self.values[*a]).map(|(g, x)| g * x).collect();
                    add(&mut adj, *a, &da);
                    add(&mut adj, *b, &db);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        add(&mut adj, p, &d);
                    }
                }
                Op::Mix {
                    gate,
                    keep,
                    incoming,
                } => {
                    let g = self.values[*gate][0];
                    let k = &self.values[*keep];
                    let x = &self.values[*incoming];
                    let dg: f64 = d
                        .iter()
                        .zip(k.iter().zip(x))
                        .map(|(dd, (kk, xx))| dd * (kk - xx))
                        .sum();
                    let dk: Vec<f64> = d.iter().map(|dd| dd * g).collect();
                    let dx: Vec<f64> = d.iter().map(|dd| dd * (1.0 - g)).collect();
                    add(&mut adj, *gate, &[dg]);
                    add(&mut adj, *keep, &dk);
                    add(&mut adj, *incoming, &dx);
                }
            }
        }
    }
}
