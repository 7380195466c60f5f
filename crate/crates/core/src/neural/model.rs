//! Encoder-stack imputation network over 24-step day vectors.
//!
//! Each hour is embedded from its (value, observed) pair plus a learned
//! positional vector, passed through `n_layers` post-norm encoder blocks
//! (multi-head self-attention and a GELU feed-forward, each with a residual
//! connection and layer normalization) and projected back to one value.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Mat, Tape, Var};
use crate::data::HOURS;
use crate::error::{Error, Result};
use crate::rng::{self, Prng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub preset: String,
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub dropout: f64,
    pub attn_dropout: f64,
}

impl AttentionConfig {
    /// Two encoder layers, d_model 256, d_ff 128, 4 heads of 64.
    pub fn saits() -> Self {
        Self {
            preset: "saits".into(),
            n_layers: 2,
            d_model: 256,
            d_ff: 128,
            n_heads: 4,
            d_k: 64,
            d_v: 64,
            dropout: 0.1,
            attn_dropout: 0.1,
        }
    }

    /// Six encoder layers, d_model 256, d_ff 256, 4 heads of 128, no
    /// attention dropout.
    pub fn transformer() -> Self {
        Self {
            preset: "transformer".into(),
            n_layers: 6,
            d_model: 256,
            d_ff: 256,
            n_heads: 4,
            d_k: 128,
            d_v: 128,
            dropout: 0.1,
            attn_dropout: 0.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "saits" => Ok(Self::saits()),
            "transformer" => Ok(Self::transformer()),
            other => Err(Error::Config(format!("unknown attention preset `{other}`"))),
        }
    }

    /// Small configuration for tests and gradient checks.
    pub fn toy(n_layers: usize, d_model: usize, n_heads: usize) -> Self {
        Self {
            preset: "toy".into(),
            n_layers,
            d_model,
            d_ff: 2 * d_model,
            n_heads,
            d_k: d_model / n_heads,
            d_v: d_model / n_heads,
            dropout: 0.0,
            attn_dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_ff == 0 || self.n_heads == 0 || self.d_k == 0 || self.d_v == 0 {
            return Err(Error::Config("attention dimensions must be positive".into()));
        }
        for (name, p) in [("dropout", self.dropout), ("attn_dropout", self.attn_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let (d, f) = (self.d_model, self.d_ff);
        let (qk, v) = (self.n_heads * self.d_k, self.n_heads * self.d_v);
        let mut shapes = vec![(2, d), (1, d), (HOURS, d)];
        for _ in 0..self.n_layers {
            shapes.extend([
                (d, qk),
                (1, qk),
                (d, qk),
                (1, qk),
                (d, v),
                (1, v),
                (v, d),
                (1, d),
                (1, d),
                (1, d),
                (d, f),
                (1, f),
                (f, d),
                (1, d),
                (1, d),
                (1, d),
            ]);
        }
        shapes.extend([(d, 1), (1, 1)]);
        shapes
    }
}

enum Init {
    Zeros,
    Ones,
    Uniform { fan_in: usize },
}

impl AttentionConfig {
    fn init_rule(&self, index: usize) -> Init {
        let layers_end = HEAD + PER_LAYER * self.n_layers;
        match index {
            IN_W => Init::Uniform { fan_in: 2 },
            IN_B => Init::Zeros,
            POS => Init::Uniform { fan_in: self.d_model },
            i if i < layers_end => match (i - HEAD) % PER_LAYER {
                WQ | WK | WV | FF1_W => Init::Uniform { fan_in: self.d_model },
                WO => Init::Uniform {
                    fan_in: self.n_heads * self.d_v,
                },
                FF2_W => Init::Uniform { fan_in: self.d_ff },
                LN1_G | LN2_G => Init::Ones,
                _ => Init::Zeros,
            },
            i if i == layers_end => Init::Uniform { fan_in: self.d_model },
            _ => Init::Zeros,
        }
    }
}

// Offsets into the parameter list.
const IN_W: usize = 0;
const IN_B: usize = 1;
const POS: usize = 2;
const HEAD: usize = 3;
const PER_LAYER: usize = 16;
const WQ: usize = 0;
const BQ: usize = 1;
const WK: usize = 2;
const BK: usize = 3;
const WV: usize = 4;
const BV: usize = 5;
const WO: usize = 6;
const BO: usize = 7;
const LN1_G: usize = 8;
const LN1_B: usize = 9;
const FF1_W: usize = 10;
const FF1_B: usize = 11;
const FF2_W: usize = 12;
const FF2_B: usize = 13;
const LN2_G: usize = 14;
const LN2_B: usize = 15;

/// Network parameters. Immutable once training finishes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionNet {
    pub config: AttentionConfig,
    pub params: Vec<Mat>,
}

/// Forward-pass products needed by training and inspection.
pub struct ForwardPass {
    pub tape: Tape,
    pub params: Vec<Var>,
    /// `(B·24) × 1` reconstruction.
    pub output: Var,
    pub attention: Vec<Var>,
}

impl AttentionNet {
    /// Weights drawn from `U(-1/√fan_in, 1/√fan_in)`; the positional table
    /// uses `fan_in = d_model`. Biases and layer-norm shifts start at 0,
    /// layer-norm scales at 1.
    pub fn init(config: AttentionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let params = config
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, (r, c))| match config.init_rule(i) {
                Init::Zeros => Mat::zeros((r, c)),
                Init::Ones => Mat::ones((r, c)),
                Init::Uniform { fan_in } => uniform(&mut rng, r, c, fan_in),
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: AttentionConfig, params: Vec<Mat>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| *s != p.dim()) {
            return Err(Error::Shape("parameters do not match the configuration".into()));
        }
        Ok(Self { config, params })
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(Mat::len).sum()
    }

    /// Records a forward pass on a fresh tape. `values` is `B × 24` with
    /// missing cells already zero-filled; `observed` is the matching 0/1
    /// mask. Dropout is active only when `rng` is given.
    pub fn forward_tape(&self, values: &Mat, observed: &Mat, mut rng: Option<&mut Prng>) -> Result<ForwardPass> {
        let cfg = &self.config;
        if values.ncols() != HOURS || values.dim() != observed.dim() {
            return Err(Error::Shape(format!(
                "expected B x {HOURS} values and mask, got {:?} and {:?}",
                values.dim(),
                observed.dim()
            )));
        }
        let batch = values.nrows();
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|m| tape.leaf(m.clone())).collect();

        let mut input = Mat::zeros((batch * HOURS, 2));
        for b in 0..batch {
            for j in 0..HOURS {
                let m = observed[[b, j]];
                input[[b * HOURS + j, 0]] = values[[b, j]] * m;
                input[[b * HOURS + j, 1]] = m;
            }
        }
        let x = tape.leaf(input);
        let h = tape.matmul(x, p[IN_W]);
        let h = tape.add_row(h, p[IN_B]);
        let mut h = tape.add_tiled(h, p[POS]);

        let mut attention = Vec::with_capacity(cfg.n_layers);
        for layer in 0..cfg.n_layers {
            let w = |k: usize| p[HEAD + layer * PER_LAYER + k];
            let q = tape.matmul(h, w(WQ));
            let q = tape.add_row(q, w(BQ));
            let k = tape.matmul(h, w(WK));
            let k = tape.add_row(k, w(BK));
            let v = tape.matmul(h, w(WV));
            let v = tape.add_row(v, w(BV));
            let keep = match rng.as_deref_mut() {
                Some(r) if cfg.attn_dropout > 0.0 => Some(
                    (0..batch * cfg.n_heads)
                        .map(|_| dropout_mask(r, HOURS, HOURS, cfg.attn_dropout))
                        .collect(),
                ),
                _ => None,
            };
            let a = tape.attention(q, k, v, cfg.n_heads, HOURS, keep);
            attention.push(a);
            let o = tape.matmul(a, w(WO));
            let mut o = tape.add_row(o, w(BO));
            if let Some(r) = rng.as_deref_mut().filter(|_| cfg.dropout > 0.0) {
                let m = dropout_mask(r, batch * HOURS, cfg.d_model, cfg.dropout);
                o = tape.dropout(o, m);
            }
            let res = tape.add(h, o);
            h = tape.layer_norm(res, w(LN1_G), w(LN1_B));

            let f = tape.matmul(h, w(FF1_W));
            let f = tape.add_row(f, w(FF1_B));
            let f = tape.gelu(f);
            let f = tape.matmul(f, w(FF2_W));
            let mut f = tape.add_row(f, w(FF2_B));
            if let Some(r) = rng.as_deref_mut().filter(|_| cfg.dropout > 0.0) {
                let m = dropout_mask(r, batch * HOURS, cfg.d_model, cfg.dropout);
                f = tape.dropout(f, m);
            }
            let res = tape.add(h, f);
            h = tape.layer_norm(res, w(LN2_G), w(LN2_B));
        }
        let n = p.len();
        let out = tape.matmul(h, p[n - 2]);
        let output = tape.add_row(out, p[n - 1]);
        Ok(ForwardPass {
            tape,
            params: p,
            output,
            attention,
        })
    }

    /// Deterministic reconstruction of a `B × 24` batch.
    pub fn forward(&self, values: &Mat, observed: &Mat) -> Result<Mat> {
        let pass = self.forward_tape(values, observed, None)?;
        Ok(reshape_output(pass.tape.value(pass.output), values.nrows()))
    }
}

pub(crate) fn reshape_output(out: &Mat, batch: usize) -> Mat {
    Array2::from_shape_fn((batch, HOURS), |(b, j)| out[[b * HOURS + j, 0]])
}

fn uniform(rng: &mut Prng, rows: usize, cols: usize, fan_in: usize) -> Mat {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Mat::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

fn dropout_mask(rng: &mut Prng, rows: usize, cols: usize, p: f64) -> Mat {
    let keep = 1.0 / (1.0 - p);
    Mat::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { 0.0 } else { keep })
}
