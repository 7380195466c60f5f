//! Iterative random-forest imputation.
//!
//! Missing cells start at their column means. Each iteration visits the
//! columns with missing cells in ascending order of missingness, fits a
//! forest on the rows where that column is observed (features: the other
//! 23 columns at their current values) and overwrites the column's missing
//! cells with its predictions. Iteration stops at `max_iter`, when the
//! squared change drops to `tol`, or as soon as the change grows, in which
//! case the previous iterate is returned.

use serde::{Deserialize, Serialize};

use super::forest::{Dataset, ForestConfig, RandomForest};
use super::Imputer;
use crate::data::{CompleteRow, DayRow, HOURS};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissForestConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
    pub max_samples: f64,
    /// Parallel width hint; imputations do not depend on it.
    pub n_jobs: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for MissForestConfig {
    fn default() -> Self {
        Self {
            n_estimators: 4,
            max_depth: 10,
            bootstrap: true,
            max_samples: 0.5,
            n_jobs: 2,
            max_iter: 10,
            tol: 0.0,
            seed: 0,
        }
    }
}

impl MissForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        self.forest(0, 0).validate()
    }

    fn forest(&self, iteration: usize, column: usize) -> ForestConfig {
        ForestConfig {
            n_estimators: self.n_estimators,
            max_depth: self.max_depth,
            bootstrap: self.bootstrap,
            max_samples: self.max_samples,
            seed: rng::derive(self.seed, &[iteration as u64, column as u64]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    NothingMissing,
    /// The change grew; the previous iterate was returned.
    Increased,
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissForestRun {
    pub imputed: Vec<CompleteRow>,
    /// Sum of squared changes of the imputed cells, one entry per iteration
    /// performed (including the one that triggered an `Increased` stop).
    pub deltas: Vec<f64>,
    /// Index (1-based) of the iterate that was returned; 0 when nothing
    /// was missing.
    pub returned_iteration: usize,
    pub stop: StopReason,
}

/// Runs the iterative scheme on a matrix with holes.
pub fn missforest_run(rows: &[DayRow], cfg: &MissForestConfig) -> Result<MissForestRun> {
    cfg.validate()?;
    let n = rows.len();
    let mut observed_per_col = [0usize; HOURS];
    let mut sums = [0.0; HOURS];
    for row in rows {
        for j in 0..HOURS {
            if let Some(v) = row[j] {
                observed_per_col[j] += 1;
                sums[j] += v;
            }
        }
    }
    let mut current: Vec<CompleteRow> = rows
        .iter()
        .map(|r| std::array::from_fn(|j| r[j].unwrap_or(f64::NAN)))
        .collect();
    let mut targets: Vec<usize> = (0..HOURS).filter(|&j| observed_per_col[j] < n).collect();
    if targets.is_empty() {
        return Ok(MissForestRun {
            imputed: current,
            deltas: Vec::new(),
            returned_iteration: 0,
            stop: StopReason::NothingMissing,
        });
    }
    if let Some(&column) = targets.iter().find(|&&j| observed_per_col[j] == 0) {
        return Err(Error::UnlearnableColumn { column });
    }
    for row in current.iter_mut() {
        for j in 0..HOURS {
            if row[j].is_nan() {
                row[j] = sums[j] / observed_per_col[j] as f64;
            }
        }
    }
    targets.sort_by_key(|&j| (n - observed_per_col[j], j));

    let mut deltas = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut query = [0.0; HOURS - 1];
    for iteration in 1..=cfg.max_iter {
        let previous = current.clone();
        for &col in &targets {
            features.clear();
            labels.clear();
            for (row, values) in rows.iter().zip(&current) {
                if let Some(v) = row[col] {
                    features.extend(values.iter().enumerate().filter(|(j, _)| *j != col).map(|(_, x)| *x));
                    labels.push(v);
                }
            }
            let data = Dataset::new(&features, HOURS - 1, &labels)?;
            let forest = RandomForest::fit(&data, &cfg.forest(iteration, col))?;
            for (row, values) in rows.iter().zip(current.iter_mut()) {
                if row[col].is_none() {
                    for (dst, (_, x)) in query.iter_mut().zip(values.iter().enumerate().filter(|(j, _)| *j != col)) {
                        *dst = *x;
                    }
                    values[col] = forest.predict(&query);
                }
            }
        }
        let delta: f64 = rows
            .iter()
            .zip(current.iter().zip(&previous))
            .map(|(row, (now, before))| {
                (0..HOURS)
                    .filter(|&j| row[j].is_none())
                    .map(|j| (now[j] - before[j]).powi(2))
                    .sum::<f64>()
            })
            .sum();
        let grew = deltas.last().is_some_and(|&last| delta > last);
        deltas.push(delta);
        if grew {
            return Ok(MissForestRun {
                imputed: previous,
                deltas,
                returned_iteration: iteration - 1,
                stop: StopReason::Increased,
            });
        }
        if delta <= cfg.tol {
            return Ok(MissForestRun {
                imputed: current,
                deltas,
                returned_iteration: iteration,
                stop: StopReason::Converged,
            });
        }
    }
    Ok(MissForestRun {
        imputed: current,
        deltas,
        returned_iteration: cfg.max_iter,
        stop: StopReason::MaxIter,
    })
}

/// Keeps its training rows; imputation runs the iterative scheme over the
/// training rows stacked with the query rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissForestImputer {
    pub config: MissForestConfig,
    pub train: Vec<DayRow>,
}

impl MissForestImputer {
    pub fn fit(train: &[DayRow], config: MissForestConfig) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::InsufficientData { found: 0, needed: 1 });
        }
        Ok(Self {
            config,
            train: train.to_vec(),
        })
    }

    pub fn impute_with_history(&self, rows: &[DayRow]) -> Result<(Vec<CompleteRow>, MissForestRun)> {
        let stacked: Vec<DayRow> = self.train.iter().chain(rows).copied().collect();
        let run = missforest_run(&stacked, &self.config)?;
        let out = rows
            .iter()
            .zip(&run.imputed[self.train.len()..])
            .map(|(row, imputed)| super::fill_missing(row, imputed))
            .collect();
        Ok((out, run))
    }
}

impl Imputer for MissForestImputer {
    fn impute(&self, row: &DayRow) -> Result<CompleteRow> {
        Ok(self.impute_with_history(std::slice::from_ref(row))?.0.remove(0))
    }

    fn impute_batch(&self, rows: &[DayRow]) -> Result<Vec<CompleteRow>> {
        Ok(self.impute_with_history(rows)?.0)
    }
}
