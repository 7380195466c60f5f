//! Masked-evaluation protocol over many buildings.
//!
//! Every building is prepared once: day matrix, seeded split of its
//! complete days, per-building normalization fitted on its training rows,
//! and one hidden cell per validation row. All models and both modes are
//! then scored against that same prepared data, so the hidden cells are
//! identical across models.

use std::time::Instant;

use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{missing_fraction, CompleteRow, DayMatrix, DayRow, HourlySeries, NormStats, SplitIndex};
use crate::error::{Error, Result};
use crate::eval::metrics::mae;
use crate::artifact::{ArtifactMetadata, ModelArtifact};
use crate::impute::{Imputer, ModelSpec, TrainedModel};
use crate::preprocess::{build_day_matrix, fit_normalizer, mask_validation, split_complete_days, DayTimezone, MaskedValidation};
use crate::rng;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

const COMMON_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One model per building.
    Dedicated,
    /// One model over all buildings' training rows.
    Common,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dedicated => "dedicated",
            Mode::Common => "common",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub modes: Vec<Mode>,
    pub models: Vec<ModelSpec>,
    pub timezone: DayTimezone,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub mask_seed: u64,
    pub model_seed: u64,
    pub normalize: bool,
    /// Keep only the chronologically first N training rows per building.
    pub max_train_rows: Option<usize>,
    /// Derive a separate split/mask stream per building from its id. When
    /// false every building uses the raw seeds.
    pub per_building_seeds: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            modes: vec![Mode::Dedicated, Mode::Common],
            models: vec![ModelSpec::Mean],
            timezone: DayTimezone::utc(),
            split_ratio: 0.8,
            split_seed: 1,
            mask_seed: 2,
            model_seed: 3,
            normalize: true,
            max_train_rows: None,
            per_building_seeds: true,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.modes.is_empty() {
            return Err(Error::Config("an experiment needs at least one model and one mode".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split ratio {} outside (0, 1)", self.split_ratio)));
        }
        if self.max_train_rows == Some(0) {
            return Err(Error::Config("max_train_rows must be positive".into()));
        }
        Ok(())
    }

    /// Seed handed to a model fitted on one building, or on the pool when
    /// `building` is `None`.
    pub fn fit_seed(&self, building: Option<&str>) -> u64 {
        match building {
            Some(id) => rng::derive(self.model_seed, &[rng::stream_id(id)]),
            None => rng::derive(self.model_seed, &[COMMON_STREAM]),
        }
    }

    fn building_seed(&self, seed: u64, building: &str) -> u64 {
        if self.per_building_seeds {
            rng::derive(seed, &[rng::stream_id(building)])
        } else {
            seed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub building: String,
    pub seed: u64,
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
    pub incomplete_rows: Vec<usize>,
    pub train_dates: Vec<NaiveDate>,
    pub val_dates: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskCell {
    /// Row of the building's day matrix.
    pub row: usize,
    pub date: NaiveDate,
    pub col: usize,
    /// Hidden value in liters/hour.
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskManifest {
    pub building: String,
    pub seed: u64,
    pub cells: Vec<MaskCell>,
}

/// Everything the models need from one building.
#[derive(Debug, Clone)]
pub struct PreparedBuilding {
    pub id: String,
    pub matrix: DayMatrix,
    pub split: SplitIndex,
    pub incomplete_rows: Vec<usize>,
    pub stats: NormStats,
    /// Normalized complete training rows.
    pub train: Vec<CompleteRow>,
    /// Validation rows in liters/hour with one hidden cell each.
    pub masked: MaskedValidation,
}

impl PreparedBuilding {
    pub fn split_manifest(&self) -> SplitManifest {
        let dates = |rows: &[usize]| rows.iter().map(|&r| self.matrix.dates[r]).collect();
        SplitManifest {
            building: self.id.clone(),
            seed: self.split.seed,
            train_rows: self.split.train_rows.clone(),
            val_rows: self.split.val_rows.clone(),
            incomplete_rows: self.incomplete_rows.clone(),
            train_dates: dates(&self.split.train_rows),
            val_dates: dates(&self.split.val_rows),
        }
    }

    pub fn mask_manifest(&self) -> MaskManifest {
        MaskManifest {
            building: self.id.clone(),
            seed: self.masked.seed,
            cells: self
                .masked
                .hidden
                .iter()
                .map(|h| {
                    let row = self.split.val_rows[h.row];
                    MaskCell {
                        row,
                        date: self.matrix.dates[row],
                        col: h.col,
                        truth: h.truth,
                    }
                })
                .collect(),
        }
    }

    /// Masked validation rows in model space.
    pub fn model_inputs(&self) -> Vec<DayRow> {
        self.masked.rows.iter().map(|r| self.stats.apply_row(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub building: String,
    pub days: usize,
    pub hours: usize,
    pub missing_pct: f64,
    pub complete_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub building: String,
    pub reason: String,
}

/// Prepared buildings plus the census and exclusions gathered on the way.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub buildings: Vec<PreparedBuilding>,
    pub census: Vec<CensusRow>,
    pub excluded: Vec<Excluded>,
}

/// Builds day matrices, splits, normalizers and validation masks. A
/// building without enough complete days is excluded, not an error.
pub fn prepare(spec: &ExperimentSpec, data: &[HourlySeries]) -> Result<Prepared> {
    spec.validate()?;
    let mut buildings = Vec::new();
    let mut census = Vec::new();
    let mut excluded = Vec::new();
    for series in data {
        let id = series.building_id.clone();
        if series.is_empty() {
            excluded.push(Excluded {
                building: id,
                reason: "empty series".into(),
            });
            continue;
        }
        let matrix = build_day_matrix(series, spec.timezone)?;
        census.push(CensusRow {
            building: id.clone(),
            days: matrix.n_rows(),
            hours: series.len(),
            missing_pct: 100.0 * missing_fraction(series)?,
            complete_days: matrix.complete_rows().len(),
        });
        let (mut split, incomplete_rows) = match split_complete_days(&matrix, spec.split_ratio, spec.building_seed(spec.split_seed, &id)) {
            Ok(s) => s,
            Err(e @ Error::InsufficientCompleteDays { .. }) => {
                excluded.push(Excluded {
                    building: id,
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        if let Some(cap) = spec.max_train_rows {
            split.train_rows.truncate(cap);
        }
        let raw_train: Vec<CompleteRow> = split
            .train_rows
            .iter()
            .map(|&r| matrix.complete_row(r).expect("train rows are complete"))
            .collect();
        let stats = if spec.normalize {
            match fit_normalizer(&raw_train) {
                Ok(s) => s,
                Err(e @ Error::InsufficientData { .. }) => {
                    excluded.push(Excluded {
                        building: id,
                        reason: e.to_string(),
                    });
                    continue;
                }
                Err(e) => return Err(e),
            }
        } else {
            NormStats::identity()
        };
        let train = raw_train.iter().map(|r| stats.apply_complete(r)).collect();
        let val_rows: Vec<DayRow> = split.val_rows.iter().map(|&r| matrix.values[r]).collect();
        let masked = mask_validation(&val_rows, spec.building_seed(spec.mask_seed, &id))?;
        buildings.push(PreparedBuilding {
            id,
            matrix,
            split,
            incomplete_rows,
            stats,
            train,
            masked,
        });
    }
    Ok(Prepared {
        buildings,
        census,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingResult {
    pub building: String,
    pub model: String,
    pub mode: Mode,
    pub mae_norm: f64,
    pub mae_lph: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub mode: Mode,
    /// Unweighted mean over buildings.
    pub mae_norm: f64,
    pub mae_lph: f64,
    pub buildings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedPoint {
    pub building: String,
    pub model: String,
    pub mode: Mode,
    pub timestamp: DateTime<Utc>,
    pub actual: f64,
    pub imputed: f64,
}

/// Digest of the hidden-cell set a model was scored against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredMask {
    pub model: String,
    pub mode: Mode,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub model: String,
    pub mode: Mode,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub prng: String,
    pub spec: ExperimentSpec,
    pub normalization: String,
    pub split_policy: String,
    pub census: Vec<CensusRow>,
    pub excluded: Vec<Excluded>,
    pub splits: Vec<SplitManifest>,
    pub masks: Vec<MaskManifest>,
    pub mask_digest: String,
    pub scored_masks: Vec<ScoredMask>,
    pub results: Vec<BuildingResult>,
    pub aggregates: Vec<AggregateRow>,
    pub imputed: Vec<ImputedPoint>,
    /// Wall-clock fit and impute time; the only nondeterministic field.
    pub timings: Vec<Timing>,
}

impl EvaluationReport {
    pub fn aggregate(&self, model: &str, mode: Mode) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.model == model && a.mode == mode)
    }

    /// Report JSON without the timing field, for reproducibility checks.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.timings.clear();
        Ok(serde_json::to_string_pretty(&copy)?)
    }
}

/// SHA-256 over (building, row, column) of every hidden cell.
pub fn mask_digest(masks: &[MaskManifest]) -> String {
    let mut h = Sha256::new();
    for m in masks {
        h.update(m.building.as_bytes());
        h.update([0u8]);
        for c in &m.cells {
            h.update((c.row as u64).to_le_bytes());
            h.update((c.col as u64).to_le_bytes());
            h.update(c.truth.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn cell_time(tz: DayTimezone, date: NaiveDate, col: usize) -> DateTime<Utc> {
    let local = date.and_hms_opt(col as u32, 0, 0).expect("hour < 24");
    tz.offset()
        .from_local_datetime(&local)
        .single()
        .expect("fixed offsets are unambiguous")
        .with_timezone(&Utc)
}

struct Scored {
    result: BuildingResult,
    points: Vec<ImputedPoint>,
    masks: MaskManifest,
}

fn score(b: &PreparedBuilding, model: &dyn Imputer, label: &str, mode: Mode, tz: DayTimezone) -> Result<Scored> {
    let inputs = b.model_inputs();
    let outputs = model.impute_batch(&inputs)?;
    let mut pred_norm = Vec::with_capacity(b.masked.hidden.len());
    let mut truth_norm = Vec::with_capacity(b.masked.hidden.len());
    let mut pred_lph = Vec::with_capacity(b.masked.hidden.len());
    let mut truth_lph = Vec::with_capacity(b.masked.hidden.len());
    let mut points = Vec::with_capacity(b.masked.hidden.len());
    for h in &b.masked.hidden {
        let p = outputs[h.row][h.col];
        let p_lph = b.stats.invert(h.col, p);
        pred_norm.push(p);
        truth_norm.push(b.stats.apply(h.col, h.truth));
        pred_lph.push(p_lph);
        truth_lph.push(h.truth);
        points.push(ImputedPoint {
            building: b.id.clone(),
            model: label.to_string(),
            mode,
            timestamp: cell_time(tz, b.matrix.dates[b.split.val_rows[h.row]], h.col),
            actual: h.truth,
            imputed: p_lph,
        });
    }
    let all = vec![true; pred_norm.len()];
    Ok(Scored {
        result: BuildingResult {
            building: b.id.clone(),
            model: label.to_string(),
            mode,
            mae_norm: mae(&pred_norm, &truth_norm, &all)?,
            mae_lph: mae(&pred_lph, &truth_lph, &all)?,
            cells: pred_norm.len(),
        },
        points,
        masks: b.mask_manifest(),
    })
}

/// Runs every configured model in every configured mode.
pub fn run_experiment(spec: &ExperimentSpec, data: &[HourlySeries]) -> Result<EvaluationReport> {
    let prepared = prepare(spec, data)?;
    run_prepared(spec, &prepared)
}

pub fn run_prepared(spec: &ExperimentSpec, prepared: &Prepared) -> Result<EvaluationReport> {
    spec.validate()?;
    let buildings = &prepared.buildings;
    if buildings.is_empty() {
        return Err(Error::InsufficientCompleteDays {
            found: 0,
            needed: crate::preprocess::MIN_COMPLETE_DAYS,
        });
    }
    let masks: Vec<MaskManifest> = buildings.iter().map(PreparedBuilding::mask_manifest).collect();
    let mut results = Vec::new();
    let mut imputed = Vec::new();
    let mut scored_masks = Vec::new();
    let mut timings = Vec::new();

    for model in &spec.models {
        let label = model.label();
        for &mode in &spec.modes {
            let started = Instant::now();
            let mut seen = Vec::new();
            match mode {
                Mode::Dedicated => {
                    for b in buildings {
                        let fitted = model.fit(&b.train, spec.fit_seed(Some(&b.id)))?;
                        let s = score(b, &fitted, &label, mode, spec.timezone)?;
                        results.push(s.result);
                        imputed.extend(s.points);
                        seen.push(s.masks);
                    }
                }
                Mode::Common => {
                    let pooled: Vec<CompleteRow> = buildings.iter().flat_map(|b| b.train.iter().copied()).collect();
                    let fitted = model.fit(&pooled, spec.fit_seed(None))?;
                    for b in buildings {
                        let s = score(b, &fitted, &label, mode, spec.timezone)?;
                        results.push(s.result);
                        imputed.extend(s.points);
                        seen.push(s.masks);
                    }
                }
            }
            scored_masks.push(ScoredMask {
                model: label.clone(),
                mode,
                digest: mask_digest(&seen),
            });
            timings.push(Timing {
                model: label.clone(),
                mode,
                seconds: started.elapsed().as_secs_f64(),
            });
        }
    }

    let aggregates = aggregate(&results, spec);
    Ok(EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        prng: rng::PRNG_NAME.to_string(),
        spec: spec.clone(),
        normalization: if spec.normalize {
            "per-building z-score per hour column, fitted on that building's training rows; \
             common mode pools rows after per-building normalization"
                .into()
        } else {
            "none".into()
        },
        split_policy: "per-building seeded random split of complete days; common mode pools the \
                       per-building training rows"
            .into(),
        census: prepared.census.clone(),
        excluded: prepared.excluded.clone(),
        splits: buildings.iter().map(PreparedBuilding::split_manifest).collect(),
        mask_digest: mask_digest(&masks),
        masks,
        scored_masks,
        results,
        aggregates,
        imputed,
        timings,
    })
}

/// Unweighted per-(model, mode) mean of the building rows.
/// Fits `model` the way [`run_prepared`] does and wraps each fit with the
/// normalization of the buildings it serves: one artifact per building in
/// dedicated mode, a single one in common mode.
pub fn train_artifacts(spec: &ExperimentSpec, prepared: &Prepared, model: &ModelSpec, mode: Mode) -> Result<Vec<ModelArtifact>> {
    let buildings = &prepared.buildings;
    if buildings.is_empty() {
        return Err(Error::InsufficientCompleteDays {
            found: 0,
            needed: crate::preprocess::MIN_COMPLETE_DAYS,
        });
    }
    let wrap = |fitted: TrainedModel, served: &[&PreparedBuilding], seed: u64| ModelArtifact {
        model: fitted,
        norm: served.iter().map(|b| (b.id.clone(), b.stats.clone())).collect(),
        metadata: ArtifactMetadata::new(seed, mode.as_str(), served.iter().map(|b| b.id.clone()).collect()),
    };
    match mode {
        Mode::Dedicated => buildings
            .iter()
            .map(|b| {
                let seed = spec.fit_seed(Some(&b.id));
                Ok(wrap(model.fit(&b.train, seed)?, &[b], seed))
            })
            .collect(),
        Mode::Common => {
            let pooled: Vec<CompleteRow> = buildings.iter().flat_map(|b| b.train.iter().copied()).collect();
            let seed = spec.fit_seed(None);
            let served: Vec<&PreparedBuilding> = buildings.iter().collect();
            Ok(vec![wrap(model.fit(&pooled, seed)?, &served, seed)])
        }
    }
}

pub fn aggregate(results: &[BuildingResult], spec: &ExperimentSpec) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for model in &spec.models {
        let label = model.label();
        for &mode in &spec.modes {
            let rows: Vec<&BuildingResult> = results.iter().filter(|r| r.model == label && r.mode == mode).collect();
            if rows.is_empty() {
                continue;
            }
            let n = rows.len() as f64;
            out.push(AggregateRow {
                model: label.clone(),
                mode,
                mae_norm: rows.iter().map(|r| r.mae_norm).sum::<f64>() / n,
                mae_lph: rows.iter().map(|r| r.mae_lph).sum::<f64>() / n,
                buildings: rows.len(),
            });
        }
    }
    out
}

