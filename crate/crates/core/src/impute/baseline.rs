//! Reference floors: per-column train mean and within-row interpolation.

use serde::{Deserialize, Serialize};

use super::{fill_missing, Imputer};
use crate::data::{CompleteRow, DayRow, HOURS};
use crate::error::{Error, Result};

fn column_means(train: &[CompleteRow]) -> Result<[f64; HOURS]> {
    if train.is_empty() {
        return Err(Error::InsufficientData { found: 0, needed: 1 });
    }
    let n = train.len() as f64;
    Ok(std::array::from_fn(|j| train.iter().map(|r| r[j]).sum::<f64>() / n))
}

/// Fills each missing cell with its column's training mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanImputer {
    pub means: [f64; HOURS],
}

impl MeanImputer {
    pub fn fit(train: &[CompleteRow]) -> Result<Self> {
        Ok(Self {
            means: column_means(train)?,
        })
    }
}

impl Imputer for MeanImputer {
    fn impute(&self, row: &DayRow) -> Result<CompleteRow> {
        Ok(fill_missing(row, &self.means))
    }
}

/// Linear interpolation between the nearest present neighbours in the row;
/// leading and trailing gaps repeat the closest present value. A row with
/// nothing present falls back to the training means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpImputer {
    pub means: [f64; HOURS],
}

impl InterpImputer {
    pub fn fit(train: &[CompleteRow]) -> Result<Self> {
        Ok(Self {
            means: column_means(train)?,
        })
    }
}

impl Imputer for InterpImputer {
    fn impute(&self, row: &DayRow) -> Result<CompleteRow> {
        let present: Vec<usize> = (0..HOURS).filter(|&j| row[j].is_some()).collect();
        if present.is_empty() {
            return Ok(self.means);
        }
        Ok(interpolate(row, &present))
    }
}

pub fn interpolate(row: &DayRow, present: &[usize]) -> CompleteRow {
    let value = |j: usize| row[j].expect("present column");
    std::array::from_fn(|j| {
        if let Some(v) = row[j] {
            return v;
        }
        let right = present.partition_point(|&p| p < j);
        match (right.checked_sub(1).map(|i| present[i]), present.get(right)) {
            (Some(l), Some(&r)) => {
                let t = (j - l) as f64 / (r - l) as f64;
                value(l) + t * (value(r) - value(l))
            }
            (Some(l), None) => value(l),
            (None, Some(&r)) => value(r),
            (None, None) => unreachable!("present is non-empty"),
        }
    })
}
