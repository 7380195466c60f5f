//! Synthetic multi-building consumption with known ground truth.
//!
//! Hourly truth follows a workday profile: `workday_peak` during
//! `peak_hours`, `base_night_rate` otherwise, the whole day scaled by
//! `weekend_factor` on weekends and holidays, plus Gaussian noise truncated
//! at zero. Values are quantized to [`QUANTUM`] liters so cumulative
//! registers difference back to the truth exactly in `f64`.

use chrono::{Datelike, Duration, NaiveDate, TimeZone, Utc, Weekday};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{HourlySeries, RawReading, HOURS};
use crate::error::{Error, Result};
use crate::rng;

/// Register resolution in liters (1/16 L).
pub const QUANTUM: f64 = 0.0625;
/// Register value before the first generated hour.
pub const INITIAL_REGISTER: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildingProfile {
    pub base_night_rate: f64,
    pub workday_peak: f64,
    pub peak_hours: Vec<usize>,
    pub weekend_factor: f64,
    pub noise_std: f64,
    pub holiday_dates: Vec<NaiveDate>,
    pub start_date: NaiveDate,
}

impl Default for BuildingProfile {
    fn default() -> Self {
        let holidays = (2020..=2026)
            .flat_map(|y| {
                [(1, 1), (1, 6), (3, 25), (5, 1), (8, 15), (10, 28), (12, 25), (12, 26)]
                    .into_iter()
                    .filter_map(move |(m, d)| NaiveDate::from_ymd_opt(y, m, d))
            })
            .collect();
        Self {
            base_night_rate: 5.0,
            workday_peak: 60.0,
            peak_hours: (8..=17).collect(),
            weekend_factor: 0.3,
            noise_std: 6.0,
            holiday_dates: holidays,
            start_date: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
        }
    }
}

impl BuildingProfile {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.base_night_rate, self.workday_peak, self.noise_std];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("profile rates must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.weekend_factor) {
            return Err(Error::Config("weekend_factor must lie in [0, 1]".into()));
        }
        if self.peak_hours.iter().any(|&h| h >= HOURS) {
            return Err(Error::Config("peak hours must lie in 0..24".into()));
        }
        Ok(())
    }

    /// Same shape with every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            base_night_rate: self.base_night_rate * factor,
            workday_peak: self.workday_peak * factor,
            noise_std: self.noise_std * factor,
            ..self.clone()
        }
    }

    pub fn is_workday(&self, date: NaiveDate) -> bool {
        !matches!(date.weekday(), Weekday::Sat | Weekday::Sun) && !self.holiday_dates.contains(&date)
    }

    /// Noise-free consumption for an hour.
    pub fn expected(&self, date: NaiveDate, hour: usize) -> f64 {
        self.hourly_rate(hour) * self.day_factor(date)
    }

    fn hourly_rate(&self, hour: usize) -> f64 {
        if self.peak_hours.contains(&hour) {
            self.workday_peak
        } else {
            self.base_night_rate
        }
    }

    /// 1 on workdays, `weekend_factor` on weekends and holidays. Scales the
    /// noisy value, so a zero factor yields all-zero days.
    pub fn day_factor(&self, date: NaiveDate) -> f64 {
        if self.is_workday(date) {
            1.0
        } else {
            self.weekend_factor
        }
    }
}

pub fn quantize(v: f64) -> f64 {
    (v / QUANTUM).round() * QUANTUM
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedBuilding {
    pub truth: HourlySeries,
    pub readings: Vec<RawReading>,
}

/// Generates `n_days` of hourly truth starting at the profile's start date
/// (UTC midnight), plus cumulative readings: an anchor in the preceding
/// hour, then two readings per hour at :20 and :59.
pub fn generate_building(
    building_id: &str,
    profile: &BuildingProfile,
    n_days: usize,
    seed: u64,
) -> Result<GeneratedBuilding> {
    profile.validate()?;
    if n_days == 0 {
        return Err(Error::Config("n_days must be at least 1".into()));
    }
    let mut rng = rng::seeded(seed);
    let noise = Normal::new(0.0, profile.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let start = Utc.from_utc_datetime(&profile.start_date.and_hms_opt(0, 0, 0).expect("midnight"));

    let mut values = Vec::with_capacity(n_days * HOURS);
    let mut readings = Vec::with_capacity(n_days * HOURS * 2 + 1);
    let mut register = INITIAL_REGISTER;
    readings.push(RawReading::new(building_id, start - Duration::minutes(1), register));
    for d in 0..n_days {
        let date = profile.start_date + Duration::days(d as i64);
        let factor = profile.day_factor(date);
        for hour in 0..HOURS {
            let raw = (profile.hourly_rate(hour) + noise.sample(&mut rng)).max(0.0) * factor;
            let v = quantize(raw);
            values.push(Some(v));
            let hour_start = start + Duration::hours((d * HOURS + hour) as i64);
            let partial = quantize((v * 0.4).floor());
            readings.push(RawReading::new(
                building_id,
                hour_start + Duration::minutes(20),
                register + partial,
            ));
            register += v;
            readings.push(RawReading::new(building_id, hour_start + Duration::minutes(59), register));
        }
    }
    Ok(GeneratedBuilding {
        truth: HourlySeries::new(building_id, start, values)?,
        readings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapKind {
    RandomPoint,
    Burst,
    WholeDay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapMechanism {
    pub kind: GapKind,
    /// Target overall missing fraction.
    pub rate: f64,
    /// Inclusive burst length range in hours.
    pub burst_len: (usize, usize),
    pub seed: u64,
}

impl GapMechanism {
    pub fn new(kind: GapKind, rate: f64, seed: u64) -> Self {
        Self {
            kind,
            rate,
            burst_len: (3, 48),
            seed,
        }
    }
}

/// Hides slots until the series' missing fraction reaches the requested
/// rate (slots already missing count towards it).
pub fn inject_gaps(series: &HourlySeries, mech: &GapMechanism) -> Result<HourlySeries> {
    if !(0.0..=1.0).contains(&mech.rate) {
        return Err(Error::Config(format!("gap rate {} outside [0, 1]", mech.rate)));
    }
    let n = series.len();
    let target = (mech.rate * n as f64).round() as usize;
    let need = target.saturating_sub(series.missing_count());
    let mut out = series.clone();
    if need == 0 {
        return Ok(out);
    }
    let mut rng = rng::seeded(mech.seed);
    match mech.kind {
        GapKind::RandomPoint => {
            let present: Vec<usize> = (0..n).filter(|&i| series.values[i].is_some()).collect();
            for i in index::sample(&mut rng, present.len(), need) {
                out.values[present[i]] = None;
            }
        }
        GapKind::Burst => {
            let (lo, hi) = mech.burst_len;
            if lo == 0 || lo > hi {
                return Err(Error::Config("burst length range must satisfy 1 <= min <= max".into()));
            }
            if n < lo {
                return Err(Error::CannotSatisfyRate {
                    rate: mech.rate,
                    reason: format!("series of {n} slots is shorter than the minimum burst of {lo}"),
                });
            }
            let mut remaining = need;
            let mut attempts = 0usize;
            while remaining > 0 {
                attempts += 1;
                if attempts > 1000 * n {
                    return Err(Error::CannotSatisfyRate {
                        rate: mech.rate,
                        reason: "bursts could not place enough gaps".into(),
                    });
                }
                let len = rng.random_range(lo..=hi);
                let start = rng.random_range(0..n);
                for slot in out.values[start..(start + len).min(n)].iter_mut() {
                    if remaining == 0 {
                        break;
                    }
                    if slot.take().is_some() {
                        remaining -= 1;
                    }
                }
            }
        }
        GapKind::WholeDay => {
            let first = (HOURS - series.start_hour.hour_of_day()) % HOURS;
            let blocks: Vec<usize> = (first..n)
                .step_by(HOURS)
                .filter(|&b| b + HOURS <= n)
                .collect();
            let full_missing = blocks
                .iter()
                .filter(|&&b| series.values[b..b + HOURS].iter().all(Option::is_none))
                .count();
            let want = ((target as f64 / HOURS as f64).round() as usize).saturating_sub(full_missing);
            let candidates: Vec<usize> = blocks
                .into_iter()
                .filter(|&b| series.values[b..b + HOURS].iter().any(Option::is_some))
                .collect();
            if want > candidates.len() {
                return Err(Error::CannotSatisfyRate {
                    rate: mech.rate,
                    reason: format!("only {} whole days available", candidates.len()),
                });
            }
            for i in index::sample(&mut rng, candidates.len(), want) {
                let b = candidates[i];
                out.values[b..b + HOURS].fill(None);
            }
        }
    }
    Ok(out)
}

trait HourOfDay {
    fn hour_of_day(&self) -> usize;
}

impl HourOfDay for chrono::DateTime<Utc> {
    fn hour_of_day(&self) -> usize {
        chrono::Timelike::hour(self) as usize
    }
}

/// Buildings `b01`, `b02`, ... sharing `profile`, each with its rates
/// scaled by a factor drawn uniformly from `1 ± scale_jitter`.
pub fn generate_fleet(
    profile: &BuildingProfile,
    n_buildings: usize,
    n_days: usize,
    seed: u64,
    scale_jitter: f64,
) -> Result<Vec<GeneratedBuilding>> {
    if !(0.0..1.0).contains(&scale_jitter) {
        return Err(Error::Config(format!("scale jitter {scale_jitter} outside [0, 1)")));
    }
    let mut scales = rng::seeded(rng::derive(seed, &[u64::MAX]));
    (0..n_buildings)
        .map(|b| {
            let factor = 1.0 + scale_jitter * scales.random_range(-1.0..=1.0);
            generate_building(&format!("b{:02}", b + 1), &profile.scaled(factor), n_days, rng::derive(seed, &[b as u64]))
        })
        .collect()
}
