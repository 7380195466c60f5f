//! k-nearest-neighbour imputation over incomplete day vectors.
//!
//! Distances use only the columns present in the query, rescaled to the
//! full width: `sqrt(24 / |C| · Σ_{j∈C} (q_j − t_j)²)`. Missing cells take
//! the unweighted mean of the k nearest training rows, ranked by distance
//! and then by training-row index.

use serde::{Deserialize, Serialize};

use super::Imputer;
use crate::data::{CompleteRow, DayRow, HOURS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnnWeighting {
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    #[serde(default)]
    pub weighting: KnnWeighting,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 3,
            weighting: KnnWeighting::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnImputer {
    pub config: KnnConfig,
    pub train: Vec<CompleteRow>,
}

impl KnnImputer {
    pub fn fit(train: &[CompleteRow], config: KnnConfig) -> Result<Self> {
        if config.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if train.len() < config.k {
            return Err(Error::InsufficientData {
                found: train.len(),
                needed: config.k,
            });
        }
        Ok(Self {
            config,
            train: train.to_vec(),
        })
    }

    /// Indices of the k nearest training rows in rank order.
    pub fn neighbours(&self, row: &DayRow) -> Result<Vec<usize>> {
        let present: Vec<usize> = (0..HOURS).filter(|&j| row[j].is_some()).collect();
        if present.is_empty() {
            return Err(Error::EmptyQueryRow);
        }
        let scale = HOURS as f64 / present.len() as f64;
        let mut ranked: Vec<(f64, usize)> = self
            .train
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let ss: f64 = present
                    .iter()
                    .map(|&j| {
                        let d = row[j].expect("present") - t[j];
                        d * d
                    })
                    .sum();
                ((scale * ss).sqrt(), i)
            })
            .collect();
        let k = self.config.k;
        let by_rank = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < ranked.len() {
            ranked.select_nth_unstable_by(k - 1, by_rank);
            ranked.truncate(k);
        }
        ranked.sort_unstable_by(by_rank);
        Ok(ranked.into_iter().map(|(_, i)| i).collect())
    }
}

impl Imputer for KnnImputer {
    fn impute(&self, row: &DayRow) -> Result<CompleteRow> {
        if row.iter().all(Option::is_some) {
            return Ok(row.map(|v| v.unwrap_or_default()));
        }
        let nn = self.neighbours(row)?;
        let k = nn.len() as f64;
        Ok(std::array::from_fn(|j| match row[j] {
            Some(v) => v,
            None => nn.iter().map(|&i| self.train[i][j]).sum::<f64>() / k,
        }))
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    fn row_from(v: &[f64]) -> CompleteRow {
        std::array::from_fn(|j| v[j % v.len()])
    }

    #[test]
    fn zero_distance_neighbour_restores_value() {
        let train = vec![row_from(&[1.0, 2.0, 3.0]), row_from(&[5.0, 1.0]), row_from(&[0.5])];
        let knn = KnnImputer::fit(&train, KnnConfig { k: 1, ..Default::default() }).unwrap();
        let mut q = train[0].map(Some);
        q[7] = None;
        assert_eq!(knn.impute(&q).unwrap(), train[0]);
    }

    #[test]
    fn five_rows_k3_hand_computed() {
        // rows differ from the query by a constant offset on every column
        let offsets = [0.0, 3.0, -1.0, 2.0, -4.0];
        let train: Vec<CompleteRow> = offsets
            .iter()
            .enumerate()
            .map(|(i, &o)| std::array::from_fn(|j| if j == 0 { 10.0 * (i as f64 + 1.0) } else { o }))
            .collect();
        let mut q: DayRow = [Some(0.0); HOURS];
        q[0] = None;
        let knn = KnnImputer::fit(&train, KnnConfig::default()).unwrap();
        // distances |offset|: 0, 3, 1, 2, 4 -> nearest rows 0, 2, 3
        assert_eq!(knn.neighbours(&q).unwrap(), vec![0, 2, 3]);
        assert_eq!(knn.impute(&q).unwrap()[0], (10.0 + 30.0 + 40.0) / 3.0);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let train = vec![row_from(&[5.0]), row_from(&[1.0]), row_from(&[-1.0])];
        let knn = KnnImputer::fit(&train, KnnConfig { k: 1, ..Default::default() }).unwrap();
        let mut q: DayRow = [Some(0.0); HOURS];
        q[0] = None;
        assert_eq!(knn.neighbours(&q).unwrap(), vec![1]);
        assert_eq!(knn.impute(&q).unwrap()[0], 1.0);
    }

    #[test]
    fn errors() {
        let train = vec![row_from(&[1.0])];
        let knn = KnnImputer::fit(&train, KnnConfig { k: 1, ..Default::default() }).unwrap();
        assert_eq!(knn.impute(&[None; HOURS]).unwrap_err().code(), "empty-query-row");
        assert!(KnnImputer::fit(&train, KnnConfig::default()).is_err());
    }
}
