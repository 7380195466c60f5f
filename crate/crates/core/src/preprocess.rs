//! Day vectors, complete-day splitting, normalization and validation masking.

use std::fmt;
use std::str::FromStr;

use chrono::{FixedOffset, NaiveDate, Timelike};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CompleteRow, DayMatrix, DayRow, HourlySeries, NormStats, SplitIndex, HOURS};
use crate::error::{Error, Result};
use crate::rng;

/// Floor applied to per-column standard deviations.
pub const STD_FLOOR: f64 = 1e-8;
/// Fewest complete days a building needs before it can be split.
pub const MIN_COMPLETE_DAYS: usize = 5;

/// Whole-hour UTC offset that defines where a day starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayTimezone(FixedOffset);

impl DayTimezone {
    pub fn utc() -> Self {
        Self(FixedOffset::east_opt(0).expect("zero offset"))
    }

    pub fn from_hours(hours: i32) -> Result<Self> {
        FixedOffset::east_opt(hours * 3600)
            .map(Self)
            .ok_or_else(|| Error::Config(format!("offset {hours}h out of range")))
    }

    pub fn offset(&self) -> FixedOffset {
        self.0
    }
}

impl Default for DayTimezone {
    fn default() -> Self {
        Self::utc()
    }
}

impl fmt::Display for DayTimezone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.local_minus_utc() == 0 {
            f.write_str("UTC")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for DayTimezone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("utc") || s == "Z" {
            return Ok(Self::utc());
        }
        let offset: FixedOffset = s
            .parse()
            .map_err(|_| Error::Config(format!("timezone `{s}` is not UTC or a ±HH:MM offset")))?;
        if offset.local_minus_utc() % 3600 != 0 {
            return Err(Error::Config(format!(
                "timezone `{s}` is not a whole-hour offset"
            )));
        }
        Ok(Self(offset))
    }
}

impl Serialize for DayTimezone {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DayTimezone {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Cuts an hourly series into calendar-day rows in `tz`. Days only partly
/// covered by the series are padded with missing slots.
pub fn build_day_matrix(series: &HourlySeries, tz: DayTimezone) -> Result<DayMatrix> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    let local = |slot: usize| series.hour_at(slot).with_timezone(&tz.offset());
    let first = local(0);
    let first_day = first.date_naive();
    let last_day = local(series.len() - 1).date_naive();
    let n_days = (last_day - first_day).num_days() as usize + 1;

    let dates: Vec<NaiveDate> = first_day.iter_days().take(n_days).collect();
    let mut values: Vec<DayRow> = vec![[None; HOURS]; n_days];
    let offset_slots = first.hour() as usize;
    for (slot, v) in series.values.iter().enumerate() {
        let pos = offset_slots + slot;
        values[pos / HOURS][pos % HOURS] = *v;
    }
    Ok(DayMatrix::from_rows(series.building_id.clone(), dates, values))
}

/// Splits the complete rows of `m` into train (`round(ratio · n)`) and
/// validation at random; rows with any missing cell come back separately.
pub fn split_complete_days(m: &DayMatrix, ratio: f64, seed: u64) -> Result<(SplitIndex, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut complete = Vec::new();
    let mut incomplete = Vec::new();
    for i in 0..m.n_rows() {
        if m.is_complete(i) {
            complete.push(i);
        } else {
            incomplete.push(i);
        }
    }
    if complete.len() < MIN_COMPLETE_DAYS {
        return Err(Error::InsufficientCompleteDays {
            found: complete.len(),
            needed: MIN_COMPLETE_DAYS,
        });
    }
    let n_train = (ratio * complete.len() as f64).round() as usize;
    if n_train == 0 || n_train == complete.len() {
        return Err(Error::Config(format!(
            "ratio {ratio} leaves an empty side for {} complete days",
            complete.len()
        )));
    }
    complete.shuffle(&mut rng::seeded(seed));
    let mut train_rows = complete[..n_train].to_vec();
    let mut val_rows = complete[n_train..].to_vec();
    train_rows.sort_unstable();
    val_rows.sort_unstable();
    Ok((
        SplitIndex {
            train_rows,
            val_rows,
            seed,
        },
        incomplete,
    ))
}

/// Population mean and standard deviation per hour column.
pub fn fit_normalizer(train: &[CompleteRow]) -> Result<NormStats> {
    if train.len() < 2 {
        return Err(Error::InsufficientData {
            found: train.len(),
            needed: 2,
        });
    }
    let n = train.len() as f64;
    let mut mean = [0.0; HOURS];
    let mut std = [0.0; HOURS];
    for j in 0..HOURS {
        let m = train.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = train.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
        mean[j] = m;
        std[j] = var.sqrt().max(STD_FLOOR);
    }
    Ok(NormStats {
        mean,
        std,
        fitted_on: train.len(),
    })
}

impl NormStats {
    pub fn apply(&self, col: usize, v: f64) -> f64 {
        (v - self.mean[col]) / self.std[col]
    }

    pub fn invert(&self, col: usize, z: f64) -> f64 {
        z * self.std[col] + self.mean[col]
    }

    pub fn apply_row(&self, row: &DayRow) -> DayRow {
        std::array::from_fn(|j| row[j].map(|v| self.apply(j, v)))
    }

    pub fn invert_row(&self, row: &DayRow) -> DayRow {
        std::array::from_fn(|j| row[j].map(|z| self.invert(j, z)))
    }

    pub fn apply_complete(&self, row: &CompleteRow) -> CompleteRow {
        std::array::from_fn(|j| self.apply(j, row[j]))
    }

    pub fn invert_complete(&self, row: &CompleteRow) -> CompleteRow {
        std::array::from_fn(|j| self.invert(j, row[j]))
    }
}

pub fn apply_norm(rows: &[DayRow], stats: &NormStats) -> Vec<DayRow> {
    rows.iter().map(|r| stats.apply_row(r)).collect()
}

pub fn invert_norm(rows: &[DayRow], stats: &NormStats) -> Vec<DayRow> {
    rows.iter().map(|r| stats.invert_row(r)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenCell {
    /// Position within the masked row list.
    pub row: usize,
    pub col: usize,
    pub truth: f64,
}

/// Validation rows with one extra cell hidden per row, plus ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedValidation {
    pub rows: Vec<DayRow>,
    pub hidden: Vec<HiddenCell>,
    pub seed: u64,
}

/// Hides one uniformly chosen cell in every row.
pub fn mask_validation(rows: &[DayRow], seed: u64) -> Result<MaskedValidation> {
    let mut rng = rng::seeded(seed);
    let mut masked = Vec::with_capacity(rows.len());
    let mut hidden = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.iter().any(Option::is_none) {
            return Err(Error::RowNotComplete { row: i });
        }
        let col = rng.random_range(0..HOURS);
        let mut r = *row;
        let truth = r[col].take().expect("row checked complete");
        hidden.push(HiddenCell { row: i, col, truth });
        masked.push(r);
    }
    Ok(MaskedValidation {
        rows: masked,
        hidden,
        seed,
    })
}

pub fn to_day_row(row: &CompleteRow) -> DayRow {
    row.map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Duration, TimeZone, Utc};
    use proptest::prelude::*;

    fn start(hour: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2023, 1, 9, hour, 0, 0).unwrap()
    }

    #[test]
    fn two_full_days() {
        let s = HourlySeries::new("b", start(0), vec![Some(1.0); 48]).unwrap();
        let m = build_day_matrix(&s, DayTimezone::utc()).unwrap();
        assert_eq!(m.n_rows(), 2);
        assert!(m.mask.iter().flatten().all(|&b| b));
    }

    #[test]
    fn noon_start_pads_both_days() {
        let s = HourlySeries::new("b", start(12), vec![Some(1.0); 24]).unwrap();
        let m = build_day_matrix(&s, DayTimezone::utc()).unwrap();
        assert_eq!(m.n_rows(), 2);
        for row in &m.mask {
            assert_eq!(row.iter().filter(|&&b| b).count(), 12);
        }
        assert!(m.mask[0][12] && !m.mask[0][11]);
        assert!(m.mask[1][11] && !m.mask[1][12]);
    }

    #[test]
    fn single_hole_lands_in_place() {
        let mut v = vec![Some(2.0); 5 * 24];
        v[3 * 24 + 5] = None;
        let s = HourlySeries::new("b", start(0), v).unwrap();
        let m = build_day_matrix(&s, DayTimezone::utc()).unwrap();
        for (i, row) in m.mask.iter().enumerate() {
            for (j, &b) in row.iter().enumerate() {
                assert_eq!(b, !(i == 3 && j == 5));
            }
        }
    }

    #[test]
    fn offset_shifts_day_boundary() {
        let s = HourlySeries::new("b", start(0), vec![Some(1.0); 24]).unwrap();
        let tz: DayTimezone = "+02:00".parse().unwrap();
        let m = build_day_matrix(&s, tz).unwrap();
        assert_eq!(m.n_rows(), 2);
        assert!(m.mask[0][2] && !m.mask[0][1]);
        assert!("+05:30".parse::<DayTimezone>().is_err());
    }

    fn matrix_with(complete: usize, incomplete: usize) -> DayMatrix {
        let d0 = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        let n = complete + incomplete;
        let dates = (0..n).map(|i| d0 + Duration::days(i as i64)).collect();
        let values = (0..n)
            .map(|i| {
                let mut r: DayRow = [Some(i as f64); HOURS];
                if i >= complete {
                    r[7] = None;
                }
                r
            })
            .collect();
        DayMatrix::from_rows("b", dates, values)
    }

    #[test]
    fn split_sizes_and_determinism() {
        let m = matrix_with(10, 3);
        let (a, inc) = split_complete_days(&m, 0.8, 42).unwrap();
        assert_eq!(a.train_rows.len(), 8);
        assert_eq!(a.val_rows.len(), 2);
        assert!(a.train_rows.iter().all(|r| !a.val_rows.contains(r)));
        assert_eq!(inc, vec![10, 11, 12]);
        let (b, _) = split_complete_days(&m, 0.8, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_needs_complete_days() {
        let m = matrix_with(0, 6);
        assert_eq!(
            split_complete_days(&m, 0.8, 1).unwrap_err().code(),
            "insufficient-complete-days"
        );
    }

    #[test]
    fn normalizer_examples() {
        let mut a = [5.0; HOURS];
        let mut b = [5.0; HOURS];
        a[0] = 0.0;
        b[0] = 2.0;
        let stats = fit_normalizer(&[a, b]).unwrap();
        assert_eq!(stats.mean[0], 1.0);
        assert_eq!(stats.std[0], 1.0);
        assert_eq!(stats.apply(0, 0.0), -1.0);
        assert_eq!(stats.apply(0, 2.0), 1.0);
        // constant column
        assert_eq!(stats.std[3], STD_FLOOR);
        assert_eq!(stats.apply(3, 5.0), 0.0);
        assert_eq!(fit_normalizer(&[a]).unwrap_err().code(), "insufficient-data");
    }

    #[test]
    fn mask_one_cell_per_row() {
        let rows = vec![[Some(1.0); HOURS]];
        let mv = mask_validation(&rows, 9).unwrap();
        assert_eq!(mv.hidden.len(), 1);
        let c = mv.hidden[0].col;
        assert!(c < HOURS);
        assert!(mv.rows[0][c].is_none());
        assert_eq!(mv.rows[0].iter().filter(|v| v.is_none()).count(), 1);
        assert_eq!(mask_validation(&rows, 9).unwrap(), mv);

        let mut bad = rows[0];
        bad[2] = None;
        assert_eq!(
            mask_validation(&[rows[0], bad], 9).unwrap_err().code(),
            "row-not-complete"
        );
    }

    #[test]
    fn hidden_columns_are_uniform() {
        let rows = vec![[Some(1.0); HOURS]; 1000];
        let mv = mask_validation(&rows, 2024).unwrap();
        let mut counts = [0usize; HOURS];
        for h in &mv.hidden {
            counts[h.col] += 1;
        }
        let expected = 1000.0 / HOURS as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square 0.95 quantile, 23 degrees of freedom
        assert!(chi2 < 35.172, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn norm_round_trip(rows in prop::collection::vec(prop::array::uniform24(0.0..500.0f64), 2..20)) {
            let stats = fit_normalizer(&rows).unwrap();
            for r in &rows {
                let back = stats.invert_complete(&stats.apply_complete(r));
                for j in 0..HOURS {
                    prop_assert!((back[j] - r[j]).abs() <= 1e-9 * r[j].abs().max(1.0));
                }
            }
        }

        #[test]
        fn split_partitions_rows(complete in 5usize..60, incomplete in 0usize..10, seed: u64) {
            let m = matrix_with(complete, incomplete);
            let (s, inc) = split_complete_days(&m, 0.8, seed).unwrap();
            let mut all: Vec<usize> = s.train_rows.iter().chain(&s.val_rows).chain(&inc).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..m.n_rows()).collect::<Vec<_>>());
            prop_assert_eq!(s.train_rows.len(), (0.8 * complete as f64).round() as usize);
        }
    }
}
