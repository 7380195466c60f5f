//! A small reverse-mode differentiation tape over dense `f64` matrices.
//!
//! Each operation appends a node holding its forward value plus whatever it
//! needs for the backward pass. [`Tape::backward`] walks the nodes in reverse
//! and returns a gradient per node.

use ndarray::{s, Array2, Axis};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `x + bias` with a `1 × m` bias broadcast over rows.
    AddRow(Var, Var),
    Add(Var, Var),
    /// `x + table` where row `i` of `x` receives row `i % period` of the table.
    AddTiled(Var, Var),
    Gelu(Var),
    /// The mask is pre-scaled by `1 / (1 - p)`.
    Dropout(Var, Mat),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention(Box<AttentionCache>),
    WeightedL1 {
        pred: Var,
        target: Mat,
        weight: Mat,
    },
}

struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    seq: usize,
    /// Softmax output per (batch, head), row-major over batch then head.
    probs: Vec<Mat>,
    /// Scaled dropout masks, parallel to `probs`.
    keep: Option<Vec<Mat>>,
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let out = self.value(x) + self.value(bias);
        self.push(out, Op::AddRow(x, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn add_tiled(&mut self, x: Var, table: Var) -> Var {
        let period = self.value(table).nrows();
        let mut out = self.value(x).clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            row += &self.nodes[table.0].value.row(i % period);
        }
        self.push(out, Op::AddTiled(x, table))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(out, Op::Gelu(x))
    }

    /// `mask` holds 0 for dropped entries and `1 / (1 - p)` for kept ones.
    pub fn dropout(&mut self, x: Var, mask: Mat) -> Var {
        let out = self.value(x) * &mask;
        self.push(out, Op::Dropout(x, mask))
    }

    /// Row-wise layer normalization with learned scale and shift (`1 × d`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product self-attention over blocks of `seq`
    /// consecutive rows. `q`, `k` are `(B·seq) × (heads·d_k)`, `v` is
    /// `(B·seq) × (heads·d_v)`; the output matches `v`'s shape.
    /// `keep_masks`, when given, holds one scaled dropout mask per
    /// (batch, head) applied to the attention weights.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq: usize, keep_masks: Option<Vec<Mat>>) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let rows = qv.nrows();
        let dk = qv.ncols() / heads;
        let dv = vv.ncols() / heads;
        let batch = rows / seq;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut out = Mat::zeros((rows, heads * dv));
        let mut probs = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let r = b * seq..(b + 1) * seq;
            for h in 0..heads {
                let qh = qv.slice(s![r.clone(), h * dk..(h + 1) * dk]);
                let kh = kv.slice(s![r.clone(), h * dk..(h + 1) * dk]);
                let vh = vv.slice(s![r.clone(), h * dv..(h + 1) * dv]);
                let mut p = qh.dot(&kh.t()) * scale;
                softmax_rows(&mut p);
                let weights = match &keep_masks {
                    Some(m) => &p * &m[b * heads + h],
                    None => p.clone(),
                };
                out.slice_mut(s![r.clone(), h * dv..(h + 1) * dv])
                    .assign(&weights.dot(&vh));
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention(Box::new(AttentionCache {
                q,
                k,
                v,
                heads,
                seq,
                probs,
                keep: keep_masks,
            })),
        )
    }

    /// Softmax weights recorded by an attention node, one matrix per
    /// (batch, head).
    pub fn attention_weights(&self, v: Var) -> Option<&[Mat]> {
        match &self.nodes[v.0].op {
            Op::Attention(c) => Some(&c.probs),
            _ => None,
        }
    }

    /// `Σ weight · |pred − target|` as a `1 × 1` value.
    pub fn weighted_l1(&mut self, pred: Var, target: Mat, weight: Mat) -> Var {
        let p = self.value(pred);
        let total: f64 = p
            .iter()
            .zip(&target)
            .zip(&weight)
            .map(|((p, t), w)| w * (p - t).abs())
            .sum();
        self.push(
            Mat::from_elem((1, 1), total),
            Op::WeightedL1 { pred, target, weight },
        )
    }

    /// Gradients of the scalar `root` with respect to every node. Entries
    /// for nodes that do not influence `root` are `None`.
    pub fn backward(&self, root: Var) -> Vec<Option<Mat>> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::ones(self.value(root).raw_dim()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(x, bias) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::AddTiled(x, table) => {
                    let period = self.value(*table).nrows();
                    let mut gt = Mat::zeros(self.value(*table).raw_dim());
                    for (r, row) in g.rows().into_iter().enumerate() {
                        let mut dst = gt.row_mut(r % period);
                        dst += &row;
                    }
                    accumulate(&mut grads, *table, gt);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Gelu(x) => {
                    let mut gx = self.value(*x).mapv(|x| {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
                    });
                    gx *= &g;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Dropout(x, mask) => accumulate(&mut grads, *x, &g * mask),
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * self.value(*gamma);
                    let d = xhat.ncols() as f64;
                    let mut gx = Mat::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = dh.dot(&xh);
                        let inv = inv_std[r];
                        for c in 0..xhat.ncols() {
                            gx[[r, c]] = inv / d * (d * dh[c] - sum_dh - xh[c] * sum_dh_xh);
                        }
                    }
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *beta, gbeta);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Attention(c) => {
                    let (gq, gk, gv) = self.attention_backward(c, &g);
                    accumulate(&mut grads, c.q, gq);
                    accumulate(&mut grads, c.k, gk);
                    accumulate(&mut grads, c.v, gv);
                }
                Op::WeightedL1 { pred, target, weight } => {
                    let up = g[[0, 0]];
                    let mut gp = self.value(*pred) - target;
                    gp.zip_mut_with(weight, |d, w| *d = up * w * sign(*d));
                    accumulate(&mut grads, *pred, gp);
                }
            }
            grads[i] = Some(g);
        }
        grads
    }

    fn attention_backward(&self, c: &AttentionCache, g: &Mat) -> (Mat, Mat, Mat) {
        let (qv, kv, vv) = (self.value(c.q), self.value(c.k), self.value(c.v));
        let heads = c.heads;
        let seq = c.seq;
        let dk = qv.ncols() / heads;
        let dv = vv.ncols() / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut gq = Mat::zeros(qv.raw_dim());
        let mut gk = Mat::zeros(kv.raw_dim());
        let mut gv = Mat::zeros(vv.raw_dim());
        for b in 0..qv.nrows() / seq {
            let r = b * seq..(b + 1) * seq;
            for h in 0..heads {
                let idx = b * heads + h;
                let p = &c.probs[idx];
                let qh = qv.slice(s![r.clone(), h * dk..(h + 1) * dk]);
                let kh = kv.slice(s![r.clone(), h * dk..(h + 1) * dk]);
                let vh = vv.slice(s![r.clone(), h * dv..(h + 1) * dv]);
                let go = g.slice(s![r.clone(), h * dv..(h + 1) * dv]);

                let weights = match &c.keep {
                    Some(m) => p * &m[idx],
                    None => p.clone(),
                };
                gv.slice_mut(s![r.clone(), h * dv..(h + 1) * dv])
                    .assign(&weights.t().dot(&go));
                let mut gp = go.dot(&vh.t());
                if let Some(m) = &c.keep {
                    gp *= &m[idx];
                }
                // softmax backward, row by row
                let mut gs = Mat::zeros(p.raw_dim());
                for i in 0..seq {
                    let dot = p.row(i).dot(&gp.row(i));
                    for j in 0..seq {
                        gs[[i, j]] = p[[i, j]] * (gp[[i, j]] - dot) * scale;
                    }
                }
                gq.slice_mut(s![r.clone(), h * dk..(h + 1) * dk])
                    .assign(&gs.dot(&kh));
                gk.slice_mut(s![r.clone(), h * dk..(h + 1) * dk])
                    .assign(&gs.t().dot(&qh));
            }
        }
        (gq, gk, gv)
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn softmax_rows(m: &mut Mat) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}
