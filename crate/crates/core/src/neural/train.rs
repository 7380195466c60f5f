//! Masked-reconstruction training with Adam and best-epoch selection.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{AttentionConfig, AttentionNet};
use super::tape::Mat;
use crate::data::{CompleteRow, DayRow, HOURS};
use crate::error::{Error, Result};
use crate::preprocess::MaskedValidation;
use crate::rng::{self, Prng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight of the reconstruction term on observed cells.
    pub lambda_ort: f64,
    /// Weight of the term on artificially masked cells.
    pub lambda_mit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            lambda_ort: 1.0,
            lambda_mit: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.lambda_ort < 0.0 || self.lambda_mit < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-cell weights realizing `λ_ORT · MAE(ORT cells) + λ_MIT · MAE(MIT cells)`.
/// ORT cells are observed and not artificially masked; MIT cells are the
/// artificially masked ones. Both masks are 0/1.
pub fn loss_weights(observed: &Mat, artificial: &Mat, lambda_ort: f64, lambda_mit: f64) -> Mat {
    let ort = ndarray::Zip::from(observed)
        .and(artificial)
        .map_collect(|&o, &a| if o > 0.0 && a == 0.0 { 1.0 } else { 0.0 });
    let n_ort = ort.sum();
    let n_mit = artificial.sum();
    let w_ort = if n_ort > 0.0 { lambda_ort / n_ort } else { 0.0 };
    let w_mit = if n_mit > 0.0 { lambda_mit / n_mit } else { 0.0 };
    ndarray::Zip::from(&ort)
        .and(artificial)
        .map_collect(|&o, &a| o * w_ort + a * w_mit)
}

/// Joint masked-MAE objective on `B × 24` matrices.
pub fn masked_loss(recon: &Mat, target: &Mat, observed: &Mat, artificial: &Mat, lambda_ort: f64, lambda_mit: f64) -> f64 {
    let w = loss_weights(observed, artificial, lambda_ort, lambda_mit);
    ndarray::Zip::from(recon)
        .and(target)
        .and(&w)
        .fold(0.0, |acc, &r, &t, &w| acc + w * (r - t).abs())
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &[Mat]) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            m: params.iter().map(|p| Mat::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Mat::zeros(p.raw_dim())).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Mat], grads: &[Mat]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
}

/// A trained network plus its training history. `net` holds the
/// parameters of `best_epoch`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedAttentionImputer {
    pub net: AttentionNet,
    pub history: Vec<EpochRecord>,
    /// 1-based.
    pub best_epoch: usize,
}

impl TrainedAttentionImputer {
    pub fn config(&self) -> &AttentionConfig {
        &self.net.config
    }

    pub fn best_val_mae(&self) -> f64 {
        self.history[self.best_epoch - 1].val_mae
    }

    /// Reconstructs every row and keeps reconstruction only where the input
    /// is missing.
    pub fn impute_rows(&self, rows: &[DayRow]) -> Result<Vec<CompleteRow>> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(256) {
            let (values, observed) = rows_to_input(chunk);
            let recon = self.net.forward(&values, &observed)?;
            for (b, row) in chunk.iter().enumerate() {
                out.push(std::array::from_fn(|j| row[j].unwrap_or(recon[[b, j]])));
            }
        }
        Ok(out)
    }
}

/// Zero-filled values and 0/1 observation mask for a batch of rows.
pub fn rows_to_input(rows: &[DayRow]) -> (Mat, Mat) {
    let values = Array2::from_shape_fn((rows.len(), HOURS), |(b, j)| rows[b][j].unwrap_or(0.0));
    let observed = Array2::from_shape_fn((rows.len(), HOURS), |(b, j)| f64::from(u8::from(rows[b][j].is_some())));
    (values, observed)
}

fn validation_mae(net: &AttentionNet, val: &MaskedValidation) -> Result<f64> {
    if val.hidden.is_empty() {
        return Err(Error::NoCellsToScore);
    }
    let mut total = 0.0;
    for (start, chunk) in (0..val.rows.len()).step_by(256).map(|s| (s, &val.rows[s..(s + 256).min(val.rows.len())])) {
        let (values, observed) = rows_to_input(chunk);
        let recon = net.forward(&values, &observed)?;
        for h in val.hidden.iter().filter(|h| h.row >= start && h.row < start + chunk.len()) {
            total += (recon[[h.row - start, h.col]] - h.truth).abs();
        }
    }
    Ok(total / val.hidden.len() as f64)
}

/// Trains a freshly initialized network on complete, normalized rows and
/// keeps the parameters of the epoch with the lowest masked MAE on `val`.
pub fn train(config: AttentionConfig, train_rows: &[CompleteRow], val: &MaskedValidation, cfg: &TrainConfig) -> Result<TrainedAttentionImputer> {
    cfg.validate()?;
    if train_rows.is_empty() {
        return Err(Error::InsufficientData { found: 0, needed: 1 });
    }
    let mut net = AttentionNet::init(config, rng::derive(cfg.seed, &[0]))?;
    let mut rng = rng::seeded(rng::derive(cfg.seed, &[1]));
    let mut adam = Adam::new(cfg, &net.params);
    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Mat>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let loss = train_step(&mut net, &mut adam, train_rows, idx, cfg, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            loss_sum += loss;
            batches += 1;
        }
        let val_mae = validation_mae(&net, val)?;
        if !val_mae.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_mae,
        });
        if best.as_ref().map_or(true, |(b, _, _)| val_mae < *b) {
            best = Some((val_mae, epoch, net.params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    net.params = params;
    Ok(TrainedAttentionImputer {
        net,
        history,
        best_epoch,
    })
}

fn train_step(net: &mut AttentionNet, adam: &mut Adam, rows: &[CompleteRow], idx: &[usize], cfg: &TrainConfig, rng: &mut Prng) -> Result<f64> {
    let b = idx.len();
    let target = Array2::from_shape_fn((b, HOURS), |(i, j)| rows[idx[i]][j]);
    let observed = Mat::ones((b, HOURS));
    let mut artificial = Mat::zeros((b, HOURS));
    for i in 0..b {
        artificial[[i, rng.random_range(0..HOURS)]] = 1.0;
    }
    let input_mask = &observed - &artificial;
    let values = &target * &input_mask;

    let mut pass = net.forward_tape(&values, &input_mask, Some(rng))?;
    let weights = loss_weights(&observed, &artificial, cfg.lambda_ort, cfg.lambda_mit);
    let flat = |m: &Mat| m.clone().into_shape_with_order((b * HOURS, 1)).expect("contiguous");
    let loss = pass.tape.weighted_l1(pass.output, flat(&target), flat(&weights));
    let value = pass.tape.value(loss)[[0, 0]];
    let grads = pass.tape.backward(loss);
    let param_grads: Vec<Mat> = pass
        .params
        .iter()
        .zip(&net.params)
        .map(|(v, p)| grads[v.index()].clone().unwrap_or_else(|| Mat::zeros(p.raw_dim())))
        .collect();
    adam.update(&mut net.params, &param_grads);
    Ok(value)
}
