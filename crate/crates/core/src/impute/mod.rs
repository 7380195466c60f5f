//! Imputers sharing one contract: fit on complete day vectors, then fill
//! the missing cells of any row without touching the present ones.

pub mod baseline;
pub mod forest;
pub mod knn;
pub mod missforest;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{CompleteRow, DayRow, HOURS};
use crate::error::{Error, Result};
use crate::neural::{self, AttentionConfig, TrainConfig, TrainedAttentionImputer};
use crate::preprocess::{mask_validation, to_day_row};
use crate::rng;

pub use baseline::{InterpImputer, MeanImputer};
pub use knn::{KnnConfig, KnnImputer};
pub use missforest::{missforest_run, MissForestConfig, MissForestImputer, MissForestRun};

pub trait Imputer {
    /// Returns `row` with every missing cell filled.
    fn impute(&self, row: &DayRow) -> Result<CompleteRow>;

    fn impute_batch(&self, rows: &[DayRow]) -> Result<Vec<CompleteRow>> {
        rows.iter().map(|r| self.impute(r)).collect()
    }
}

/// Present cells from `row`, the rest from `fill`.
pub fn fill_missing(row: &DayRow, fill: &CompleteRow) -> CompleteRow {
    std::array::from_fn(|j| row[j].unwrap_or(fill[j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionSpec {
    /// Named network preset, used when `network` is absent.
    pub preset: String,
    pub network: Option<AttentionConfig>,
    pub training: TrainConfig,
    /// Share of the training rows held back to pick the best epoch.
    pub selection_fraction: f64,
}

impl Default for AttentionSpec {
    fn default() -> Self {
        Self {
            preset: "saits".into(),
            network: None,
            training: TrainConfig::default(),
            selection_fraction: 0.1,
        }
    }
}

impl AttentionSpec {
    pub fn network(&self) -> Result<AttentionConfig> {
        match &self.network {
            Some(n) => Ok(n.clone()),
            None => AttentionConfig::preset(&self.preset),
        }
    }

    /// Holds back `selection_fraction` of the rows (at least one), hides
    /// one cell in each, and trains on the remainder.
    pub fn fit(&self, train: &[CompleteRow], seed: u64) -> Result<TrainedAttentionImputer> {
        if train.len() < 2 {
            return Err(Error::InsufficientData {
                found: train.len(),
                needed: 2,
            });
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction < 1.0) {
            return Err(Error::Config("selection_fraction must lie in (0, 1)".into()));
        }
        let n_sel = ((self.selection_fraction * train.len() as f64).round() as usize).clamp(1, train.len() - 1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::seeded(rng::derive(seed, &[10])));
        let (sel, fit) = order.split_at(n_sel);
        let mut sel = sel.to_vec();
        let mut fit = fit.to_vec();
        sel.sort_unstable();
        fit.sort_unstable();
        let sel_rows: Vec<DayRow> = sel.iter().map(|&i| to_day_row(&train[i])).collect();
        let fit_rows: Vec<CompleteRow> = fit.iter().map(|&i| train[i]).collect();
        let val = mask_validation(&sel_rows, rng::derive(seed, &[11]))?;
        let cfg = TrainConfig {
            seed: rng::derive(seed, &[12]),
            ..self.training.clone()
        };
        neural::train(self.network()?, &fit_rows, &val, &cfg)
    }
}

/// What to fit. The `seed` passed to [`ModelSpec::fit`] replaces any seed
/// stored in the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Mean,
    Interp,
    Knn(KnnConfig),
    #[serde(rename = "missforest")]
    MissForest(MissForestConfig),
    Attention(AttentionSpec),
}

impl ModelSpec {
    /// Short stable label used in reports.
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Mean => "mean".into(),
            ModelSpec::Interp => "interp".into(),
            ModelSpec::Knn(c) => format!("knn-k{}", c.k),
            ModelSpec::MissForest(_) => "missforest".into(),
            ModelSpec::Attention(a) => match &a.network {
                Some(n) => format!("attention-{}", n.preset),
                None => a.preset.clone(),
            },
        }
    }

    pub fn fit(&self, train: &[CompleteRow], seed: u64) -> Result<TrainedModel> {
        Ok(match self {
            ModelSpec::Mean => TrainedModel::Mean(MeanImputer::fit(train)?),
            ModelSpec::Interp => TrainedModel::Interp(InterpImputer::fit(train)?),
            ModelSpec::Knn(c) => TrainedModel::Knn(KnnImputer::fit(train, *c)?),
            ModelSpec::MissForest(c) => {
                let rows: Vec<DayRow> = train.iter().map(to_day_row).collect();
                TrainedModel::MissForest(MissForestImputer::fit(&rows, MissForestConfig { seed, ..*c })?)
            }
            ModelSpec::Attention(a) => TrainedModel::Attention(a.fit(train, seed)?),
        })
    }
}

/// A fitted imputer of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Mean(MeanImputer),
    Interp(InterpImputer),
    Knn(KnnImputer),
    MissForest(MissForestImputer),
    Attention(TrainedAttentionImputer),
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainedModel::Mean(_) => "mean",
            TrainedModel::Interp(_) => "interp",
            TrainedModel::Knn(_) => "knn",
            TrainedModel::MissForest(_) => "missforest",
            TrainedModel::Attention(_) => "attention",
        }
    }
}

impl Imputer for TrainedModel {
    fn impute(&self, row: &DayRow) -> Result<CompleteRow> {
        Ok(self.impute_batch(std::slice::from_ref(row))?.remove(0))
    }

    fn impute_batch(&self, rows: &[DayRow]) -> Result<Vec<CompleteRow>> {
        let out = match self {
            TrainedModel::Mean(m) => m.impute_batch(rows),
            TrainedModel::Interp(m) => m.impute_batch(rows),
            TrainedModel::Knn(m) => m.impute_batch(rows),
            TrainedModel::MissForest(m) => m.impute_batch(rows),
            TrainedModel::Attention(m) => m.impute_rows(rows),
        }?;
        debug_assert!(rows.iter().zip(&out).all(|(r, o)| (0..HOURS).all(|j| r[j].is_none_or(|v| v.to_bits() == o[j].to_bits()))));
        Ok(out)
    }
}
