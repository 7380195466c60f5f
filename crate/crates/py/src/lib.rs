//! Python bindings: `import pymeterfill`.
//!
//! Series cross the boundary as `(building_id, start, values)` with `start`
//! an RFC 3339 hour and missing values as `None`. Model and experiment
//! configurations are passed as JSON strings in the same shape as the TOML
//! run config.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use meterfill::artifact::{ArtifactMetadata, ModelArtifact};
use meterfill::eval::{self, ExperimentSpec};
use meterfill::ingest::{self, IngestOptions, ReadingsFormat, ResetPolicy};
use meterfill::neural::{self, AttentionConfig, GradCheckOptions};
use meterfill::preprocess::{self, DayTimezone};
use meterfill::synth::{self, BuildingProfile, GapKind, GapMechanism};
use meterfill::{CompleteRow, DayRow, HourlySeries, Imputer, ModelSpec, TrainedModel, HOURS};

create_exception!(pymeterfill, MeterfillError, PyException, "Raised for every pipeline failure; the message starts with the error code.");

type Series = (String, String, Vec<Option<f64>>);

fn to_py(e: meterfill::Error) -> PyErr {
    MeterfillError::new_err(format!("{}: {e}", e.code()))
}

fn config_err(msg: impl std::fmt::Display) -> PyErr {
    to_py(meterfill::Error::Config(msg.to_string()))
}

fn parse_time(s: &str) -> PyResult<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| config_err(format!("bad timestamp `{s}`: {e}")))
}

fn series_from(s: &Series) -> PyResult<HourlySeries> {
    HourlySeries::new(s.0.clone(), parse_time(&s.1)?, s.2.clone()).map_err(to_py)
}

fn series_to(s: &HourlySeries) -> Series {
    (s.building_id.clone(), ingest::format_timestamp(&s.start_hour), s.values.clone())
}

fn rows_in<T: Copy + Default>(rows: Vec<Vec<T>>) -> PyResult<Vec<[T; HOURS]>> {
    rows.into_iter()
        .map(|r| {
            <[T; HOURS]>::try_from(r.as_slice()).map_err(|_| config_err(format!("rows need {HOURS} values, got {}", r.len())))
        })
        .collect()
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| config_err(e))
}

/// Synthetic building: returns `(readings, truth)` where readings are
/// `(building_id, timestamp, register_liters)` tuples and truth is a series.
#[pyfunction]
#[pyo3(signature = (building_id, days, seed, profile_json=None))]
fn generate_building(building_id: &str, days: usize, seed: u64, profile_json: Option<&str>) -> PyResult<(Vec<(String, String, f64)>, Series)> {
    let profile: BuildingProfile = match profile_json {
        Some(p) => from_json(p)?,
        None => BuildingProfile::default(),
    };
    let g = synth::generate_building(building_id, &profile, days, seed).map_err(to_py)?;
    let readings = g
        .readings
        .iter()
        .map(|r| (r.building_id.clone(), ingest::format_timestamp(&r.timestamp), r.register))
        .collect();
    Ok((readings, series_to(&g.truth)))
}

/// Hides slots of a series; `kind` is "random-point", "burst" or "whole-day".
#[pyfunction]
fn inject_gaps(series: Series, kind: &str, rate: f64, seed: u64) -> PyResult<Series> {
    let kind = match kind {
        "random-point" => GapKind::RandomPoint,
        "burst" => GapKind::Burst,
        "whole-day" => GapKind::WholeDay,
        other => return Err(config_err(format!("unknown gap kind `{other}`"))),
    };
    let out = synth::inject_gaps(&series_from(&series)?, &GapMechanism::new(kind, rate, seed)).map_err(to_py)?;
    Ok(series_to(&out))
}

#[pyfunction]
fn missing_fraction(series: Series) -> PyResult<f64> {
    meterfill::missing_fraction(&series_from(&series)?).map_err(to_py)
}

/// Parses a readings CSV (`building_id,timestamp,register_liters`) and
/// returns one hourly series per building.
#[pyfunction]
#[pyo3(signature = (csv_text, reset_policy="flag"))]
fn aggregate_readings(csv_text: &str, reset_policy: &str) -> PyResult<Vec<Series>> {
    let reset_policy: ResetPolicy = from_json(&format!("\"{reset_policy}\""))?;
    let parsed = ingest::parse_readings(csv_text.as_bytes(), &ReadingsFormat::default()).map_err(to_py)?;
    let opts = IngestOptions {
        reset_policy,
        window: None,
    };
    let (series, _) = ingest::ingest_all(&parsed, &opts).map_err(to_py)?;
    Ok(series.iter().map(series_to).collect())
}

/// Calendar-day rows of a series: `(dates, rows)`.
#[pyfunction]
#[pyo3(signature = (series, timezone="UTC"))]
fn day_matrix(series: Series, timezone: &str) -> PyResult<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let tz: DayTimezone = timezone.parse().map_err(to_py)?;
    let m = preprocess::build_day_matrix(&series_from(&series)?, tz).map_err(to_py)?;
    Ok((m.dates.iter().map(|d| d.to_string()).collect(), m.values.iter().map(|r| r.to_vec()).collect()))
}

#[pyfunction]
fn mae(predicted: Vec<f64>, actual: Vec<f64>) -> PyResult<f64> {
    let all = vec![true; predicted.len()];
    eval::mae(&predicted, &actual, &all).map_err(to_py)
}

/// Masked evaluation over the given series; returns the report as JSON.
#[pyfunction]
fn evaluate(series: Vec<Series>, spec_json: &str) -> PyResult<String> {
    let spec: ExperimentSpec = from_json(spec_json)?;
    let data = series.iter().map(series_from).collect::<PyResult<Vec<_>>>()?;
    let report = eval::run_experiment(&spec, &data).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| config_err(e))
}

/// Largest relative error between analytic and finite-difference
/// gradients of a small attention network.
#[pyfunction]
#[pyo3(signature = (n_layers, d_model, n_heads, seed, samples=60, input_scale=1.0))]
fn gradient_check(n_layers: usize, d_model: usize, n_heads: usize, seed: u64, samples: usize, input_scale: f64) -> PyResult<f64> {
    let opts = GradCheckOptions {
        samples,
        input_scale,
        ..Default::default()
    };
    let rep = neural::gradient_check(&AttentionConfig::toy(n_layers, d_model, n_heads), seed, &opts).map_err(to_py)?;
    Ok(rep.max_rel_error)
}

/// A fitted imputer.
#[pyclass(module = "pymeterfill")]
struct Model {
    inner: TrainedModel,
}

#[pymethods]
impl Model {
    /// Fits on complete rows of 24 values; `spec_json` is e.g.
    /// `{"kind": "knn", "k": 3}`.
    #[staticmethod]
    #[pyo3(signature = (spec_json, rows, seed=0))]
    fn fit(spec_json: &str, rows: Vec<Vec<f64>>, seed: u64) -> PyResult<Self> {
        let spec: ModelSpec = from_json(spec_json)?;
        let rows: Vec<CompleteRow> = rows_in(rows)?;
        Ok(Self {
            inner: spec.fit(&rows, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    /// Fills the `None` cells of each row; present cells come back as given.
    fn impute(&self, rows: Vec<Vec<Option<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        let rows: Vec<DayRow> = rows_in(rows)?;
        let out = self.inner.impute_batch(&rows).map_err(to_py)?;
        Ok(out.iter().map(|r| r.to_vec()).collect())
    }

    /// Artifact bytes (no normalization attached).
    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let artifact = ModelArtifact {
            model: self.inner.clone(),
            norm: BTreeMap::new(),
            metadata: ArtifactMetadata::new(0, "python", Vec::new()),
        };
        Ok(PyBytes::new(py, &artifact.to_bytes().map_err(to_py)?))
    }

    #[staticmethod]
    #[pyo3(signature = (data, expect_kind=None))]
    fn from_bytes(data: &[u8], expect_kind: Option<&str>) -> PyResult<Self> {
        let artifact = ModelArtifact::from_bytes(data, expect_kind).map_err(to_py)?;
        Ok(Self { inner: artifact.model })
    }

    fn __repr__(&self) -> String {
        format!("Model(kind='{}')", self.inner.kind())
    }
}

#[pymodule]
pub fn pymeterfill(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MeterfillError", m.py().get_type::<MeterfillError>())?;
    m.add("HOURS", HOURS)?;
    m.add("PRNG", meterfill::rng::PRNG_NAME)?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(generate_building, m)?)?;
    m.add_function(wrap_pyfunction!(inject_gaps, m)?)?;
    m.add_function(wrap_pyfunction!(missing_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_readings, m)?)?;
    m.add_function(wrap_pyfunction!(day_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
