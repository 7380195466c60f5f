//! Exhaustive grid search over model configurations.

use serde::{Deserialize, Serialize};

use super::experiment::{run_experiment, ExperimentSpec, Mode};
use crate::data::HourlySeries;
use crate::error::{Error, Result};
use crate::impute::ModelSpec;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub position: usize,
    pub label: String,
    pub spec: ModelSpec,
    pub mae_norm: f64,
    pub mae_lph: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub mode: Mode,
    pub seed: u64,
    pub best: usize,
    /// In grid order.
    pub leaderboard: Vec<GridEntry>,
}

impl GridResult {
    pub fn best_entry(&self) -> &GridEntry {
        &self.leaderboard[self.best]
    }
}

/// Scores every grid point with `base`'s split and a masking derived from
/// `seed` (so the held-out cells differ from the final evaluation), in
/// the first mode of `base`. The lowest aggregate normalized MAE wins;
/// ties go to the earlier grid point.
pub fn grid_search(grid: &[ModelSpec], data: &[HourlySeries], base: &ExperimentSpec, seed: u64) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Config("grid search needs at least one configuration".into()));
    }
    let mode = *base
        .modes
        .first()
        .ok_or_else(|| Error::Config("grid search needs a mode".into()))?;
    let mut leaderboard = Vec::with_capacity(grid.len());
    for (position, spec) in grid.iter().enumerate() {
        let run = ExperimentSpec {
            modes: vec![mode],
            models: vec![spec.clone()],
            mask_seed: rng::derive(seed, &[base.mask_seed]),
            ..base.clone()
        };
        let report = run_experiment(&run, data)?;
        let agg = report
            .aggregate(&spec.label(), mode)
            .ok_or_else(|| Error::Config("grid point produced no scores".into()))?;
        leaderboard.push(GridEntry {
            position,
            label: spec.label(),
            spec: spec.clone(),
            mae_norm: agg.mae_norm,
            mae_lph: agg.mae_lph,
        });
    }
    let mut best = 0;
    for (i, e) in leaderboard.iter().enumerate() {
        if e.mae_norm < leaderboard[best].mae_norm {
            best = i;
        }
    }
    Ok(GridResult {
        mode,
        seed,
        best,
        leaderboard,
    })
}
