//! Domain types shared by every stage of the pipeline.

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slots per day vector.
pub const HOURS: usize = 24;

/// One day of hourly consumption; `None` marks a missing slot.
pub type DayRow = [Option<f64>; HOURS];
/// A day with all 24 values present.
pub type CompleteRow = [f64; HOURS];

/// A single decoded meter observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReading {
    pub building_id: String,
    pub timestamp: DateTime<Utc>,
    /// Cumulative register in liters.
    pub register: f64,
}

impl RawReading {
    pub fn new(building_id: impl Into<String>, timestamp: DateTime<Utc>, register: f64) -> Self {
        Self {
            building_id: building_id.into(),
            timestamp,
            register,
        }
    }
}

/// Hourly consumption (liters/hour) for one building. Slot `i` covers the
/// hour starting at `start_hour + i` hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlySeries {
    pub building_id: String,
    pub start_hour: DateTime<Utc>,
    pub values: Vec<Option<f64>>,
}

impl HourlySeries {
    pub fn new(
        building_id: impl Into<String>,
        start_hour: DateTime<Utc>,
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        if start_hour.minute() != 0 || start_hour.second() != 0 || start_hour.nanosecond() != 0 {
            return Err(Error::Config(format!(
                "series start {start_hour} is not on an hour boundary"
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|v| matches!(v, Some(x) if !x.is_finite() || *x < 0.0))
        {
            return Err(Error::Config(format!(
                "slot {i} holds a negative or non-finite consumption"
            )));
        }
        Ok(Self {
            building_id: building_id.into(),
            start_hour,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn hour_at(&self, slot: usize) -> DateTime<Utc> {
        self.start_hour + Duration::hours(slot as i64)
    }

    /// Exclusive end of the series window.
    pub fn end_hour(&self) -> DateTime<Utc> {
        self.hour_at(self.values.len())
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

/// Fraction of missing slots in `series`.
pub fn missing_fraction(series: &HourlySeries) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(series.missing_count() as f64 / series.len() as f64)
}

/// N days × 24 hours of consumption with an explicit presence mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMatrix {
    pub building_id: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<DayRow>,
    pub mask: Vec<[bool; HOURS]>,
}

impl DayMatrix {
    /// Builds a matrix whose mask is derived from `values`.
    pub fn from_rows(building_id: impl Into<String>, dates: Vec<NaiveDate>, values: Vec<DayRow>) -> Self {
        let mask = values.iter().map(|row| row.map(|v| v.is_some())).collect();
        Self {
            building_id: building_id.into(),
            dates,
            values,
            mask,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn is_complete(&self, row: usize) -> bool {
        self.values[row].iter().all(Option::is_some)
    }

    pub fn complete_row(&self, row: usize) -> Option<CompleteRow> {
        let r = &self.values[row];
        if r.iter().any(Option::is_none) {
            return None;
        }
        Some(std::array::from_fn(|j| r[j].unwrap_or_default()))
    }

    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.is_complete(i)).collect()
    }
}

/// A single broken invariant found by [`validate_day_matrix`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    /// `dates`, `values` and `mask` disagree on the number of rows.
    RowCount { dates: usize, values: usize, mask: usize },
    MaskMismatch { row: usize, col: usize },
    NegativeValue { row: usize, col: usize },
    NonFiniteValue { row: usize, col: usize },
    DuplicateDate { row: usize },
    UnorderedDate { row: usize },
}

/// Returns every invariant violation in `m`; an empty list means the matrix
/// is well formed.
pub fn validate_day_matrix(m: &DayMatrix) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = m.values.len();
    if m.dates.len() != n || m.mask.len() != n {
        out.push(Violation::RowCount {
            dates: m.dates.len(),
            values: n,
            mask: m.mask.len(),
        });
    }
    for (row, (values, mask)) in m.values.iter().zip(&m.mask).enumerate() {
        for col in 0..HOURS {
            if mask[col] != values[col].is_some() {
                out.push(Violation::MaskMismatch { row, col });
            }
            match values[col] {
                Some(v) if !v.is_finite() => out.push(Violation::NonFiniteValue { row, col }),
                Some(v) if v < 0.0 => out.push(Violation::NegativeValue { row, col }),
                _ => {}
            }
        }
    }
    for row in 1..m.dates.len() {
        let (prev, cur) = (m.dates[row - 1], m.dates[row]);
        if cur == prev {
            out.push(Violation::DuplicateDate { row });
        } else if cur < prev {
            out.push(Violation::UnorderedDate { row });
        }
    }
    out
}

/// Train/validation partition of a matrix's complete rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
    pub seed: u64,
}

/// Per-hour-column z-score statistics, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; HOURS],
    pub std: [f64; HOURS],
    pub fitted_on: usize,
}

impl NormStats {
    /// Statistics that leave values unchanged.
    pub fn identity() -> Self {
        Self {
            mean: [0.0; HOURS],
            std: [1.0; HOURS],
            fitted_on: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap()
    }

    fn series(values: Vec<Option<f64>>) -> HourlySeries {
        HourlySeries::new("b", t0(), values).unwrap()
    }

    #[test]
    fn missing_fraction_examples() {
        assert_eq!(missing_fraction(&series(vec![Some(1.0); 8])).unwrap(), 0.0);
        assert_eq!(missing_fraction(&series(vec![None; 8])).unwrap(), 1.0);
        let mut v = vec![Some(2.0); 8];
        v[1] = None;
        v[6] = None;
        assert_eq!(missing_fraction(&series(v)).unwrap(), 0.25);
        assert!(matches!(
            missing_fraction(&series(vec![])),
            Err(Error::EmptySeries)
        ));
    }

    #[test]
    fn series_rejects_negative_and_unaligned() {
        assert!(HourlySeries::new("b", t0(), vec![Some(-1.0)]).is_err());
        assert!(HourlySeries::new("b", t0() + Duration::minutes(5), vec![]).is_err());
    }

    fn matrix(n: usize) -> DayMatrix {
        let d0 = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
        let dates = (0..n).map(|i| d0 + Duration::days(i as i64)).collect();
        let values = (0..n)
            .map(|i| std::array::from_fn(|j| Some((i * HOURS + j) as f64)))
            .collect();
        DayMatrix::from_rows("b", dates, values)
    }

    #[test]
    fn validate_examples() {
        let m = matrix(3);
        assert!(validate_day_matrix(&m).is_empty());

        let mut bad = m.clone();
        bad.values[1][5] = None;
        assert_eq!(
            validate_day_matrix(&bad),
            vec![Violation::MaskMismatch { row: 1, col: 5 }]
        );

        let mut dup = m;
        dup.dates[2] = dup.dates[1];
        assert_eq!(
            validate_day_matrix(&dup),
            vec![Violation::DuplicateDate { row: 2 }]
        );
    }

    proptest! {
        #[test]
        fn concatenation_weights_fractions(a in prop::collection::vec(prop::option::of(0.0..10.0f64), 1..60),
                                           b in prop::collection::vec(prop::option::of(0.0..10.0f64), 1..60)) {
            let fa = missing_fraction(&series(a.clone())).unwrap();
            let fb = missing_fraction(&series(b.clone())).unwrap();
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let joined = series(a.into_iter().chain(b).collect());
            let fj = missing_fraction(&joined).unwrap();
            prop_assert!((fj - (fa * na + fb * nb) / (na + nb)).abs() < 1e-12);
        }

        #[test]
        fn one_violation_per_corruption(n in 2usize..8, holes in prop::collection::vec((0usize..8, 0usize..HOURS), 0..10),
                                        kind in 0u8..3, row in 0usize..8, col in 0usize..HOURS) {
            let mut m = matrix(n);
            for (r, c) in holes {
                if r < n {
                    m.values[r][c] = None;
                    m.mask[r][c] = false;
                }
            }
            prop_assert!(validate_day_matrix(&m).is_empty());
            let row = row % n;
            match kind {
                0 => m.mask[row][col] = !m.mask[row][col],
                1 => {
                    m.values[row][col] = Some(-1.0);
                    m.mask[row][col] = true;
                }
                _ => {
                    let row = row.max(1);
                    m.dates[row] = m.dates[row - 1];
                }
            }
            prop_assert_eq!(validate_day_matrix(&m).len(), 1);
        }
    }
}
