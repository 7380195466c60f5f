//! Finite-difference verification of the tape's parameter gradients.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::model::{AttentionConfig, AttentionNet};
use super::tape::Mat;
use super::train::loss_weights;
use crate::data::HOURS;
use crate::error::{Error, Result};
use crate::rng;

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so that gradients that are
/// zero up to rounding are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub batch: usize,
    pub samples: usize,
    /// Multiplier on the random inputs; large values saturate the softmax.
    pub input_scale: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            batch: 3,
            samples: 60,
            input_scale: 1.0,
        }
    }
}

/// Compares analytic gradients of the masked loss with central finite
/// differences on a random subset of parameters. Dropout is disabled.
pub fn gradient_check(config: &AttentionConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if opts.samples == 0 || opts.batch == 0 {
        return Err(Error::Config("gradient check needs samples and a batch".into()));
    }
    let mut cfg = config.clone();
    cfg.dropout = 0.0;
    cfg.attn_dropout = 0.0;
    let mut net = AttentionNet::init(cfg, rng::derive(seed, &[0]))?;
    let mut rng = rng::seeded(rng::derive(seed, &[1]));

    let b = opts.batch;
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let target = Mat::from_shape_simple_fn((b, HOURS), &mut normal) * opts.input_scale;
    let observed = Mat::ones((b, HOURS));
    let mut artificial = Mat::zeros((b, HOURS));
    for i in 0..b {
        artificial[[i, (i * 5 + 3) % HOURS]] = 1.0;
    }
    let input_mask = &observed - &artificial;
    let values = &target * &input_mask;
    let weights = loss_weights(&observed, &artificial, 1.0, 1.0);
    let flat = |m: &Mat| m.clone().into_shape_with_order((b * HOURS, 1)).expect("contiguous");
    let (flat_target, flat_weights) = (flat(&target), flat(&weights));

    let loss_of = |net: &AttentionNet| -> Result<f64> {
        let mut pass = net.forward_tape(&values, &input_mask, None)?;
        let loss = pass.tape.weighted_l1(pass.output, flat_target.clone(), flat_weights.clone());
        Ok(pass.tape.value(loss)[[0, 0]])
    };

    let mut pass = net.forward_tape(&values, &input_mask, None)?;
    let loss = pass.tape.weighted_l1(pass.output, flat_target.clone(), flat_weights.clone());
    let grads = pass.tape.backward(loss);
    let analytic: Vec<Mat> = pass
        .params
        .iter()
        .zip(&net.params)
        .map(|(v, p)| grads[v.index()].clone().unwrap_or_else(|| Mat::zeros(p.raw_dim())))
        .collect();

    let total = net.n_scalars();
    let mut max_rel: f64 = 0.0;
    for _ in 0..opts.samples {
        let mut flat_idx = rng.random_range(0..total);
        let mut t = 0;
        while flat_idx >= net.params[t].len() {
            flat_idx -= net.params[t].len();
            t += 1;
        }
        let cols = net.params[t].ncols();
        let at = [flat_idx / cols, flat_idx % cols];
        let orig = net.params[t][at];
        net.params[t][at] = orig + STEP;
        let up = loss_of(&net)?;
        net.params[t][at] = orig - STEP;
        let down = loss_of(&net)?;
        net.params[t][at] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[t][at];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        checked: opts.samples,
    })
}
