//! CSV and text tables: hourly series, census, per-building MAE, imputed
//! vs. actual series, and the per-model summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use chrono::{DateTime, Duration, Utc};

use crate::data::HourlySeries;
use crate::error::{Error, Result};
use crate::eval::experiment::{BuildingResult, CensusRow, EvaluationReport, ImputedPoint, Mode};
use crate::ingest::format_timestamp;

pub const HOURLY_HEADER: [&str; 3] = ["building_id", "timestamp", "consumption_liters"];

fn csv_err(context: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(context, e.into())
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

/// Hourly consumption, one line per slot; missing slots are written as `NaN`.
pub fn write_hourly<W: Write>(out: W, series: &[HourlySeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = csv_err("writing hourly series");
    w.write_record(HOURLY_HEADER).map_err(&err)?;
    for s in series {
        for (i, v) in s.values.iter().enumerate() {
            w.write_record([s.building_id.as_str(), &format_timestamp(&s.hour_at(i)), &fmt_value(*v)])
                .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io("writing hourly series", e))
}

/// Reads hourly series written by [`write_hourly`]. Hours absent from the
/// file inside a building's span become missing slots.
pub fn read_hourly<R: Read>(input: R) -> Result<Vec<HourlySeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(csv_err("reading hourly series"))?.clone();
    if header.iter().collect::<Vec<_>>() != HOURLY_HEADER {
        return Err(Error::BadHeader {
            expected: HOURLY_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut per: BTreeMap<String, BTreeMap<DateTime<Utc>, Option<f64>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err("reading hourly series"))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| Error::MalformedLine { line, reason };
        let t = DateTime::parse_from_rfc3339(&rec[1])
            .map_err(|e| bad(format!("bad timestamp: {e}")))?
            .with_timezone(&Utc);
        let v = match rec[2].trim() {
            "" | "NaN" | "nan" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad(format!("bad value `{s}`")))?),
        };
        per.entry(rec[0].to_string()).or_default().insert(t, v);
    }
    per.into_iter()
        .map(|(id, slots)| {
            let start = *slots.keys().next().expect("non-empty");
            let end = *slots.keys().next_back().expect("non-empty");
            let n = ((end - start).num_hours() + 1) as usize;
            let values = (0..n)
                .map(|i| slots.get(&(start + Duration::hours(i as i64))).copied().flatten())
                .collect();
            HourlySeries::new(id, start, values)
        })
        .collect()
}

pub fn write_census<W: Write>(out: W, census: &[CensusRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = csv_err("writing census");
    w.write_record(["building", "rows", "hours", "pct_missing", "complete_days"]).map_err(&err)?;
    for c in census {
        w.write_record([
            c.building.clone(),
            c.days.to_string(),
            c.hours.to_string(),
            format!("{:.2}", c.missing_pct),
            c.complete_days.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io("writing census", e))
}

pub fn write_mae_by_building<W: Write>(out: W, results: &[BuildingResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = csv_err("writing mae table");
    w.write_record(["building", "model", "mode", "mae_norm", "mae_lph"]).map_err(&err)?;
    for r in results {
        w.write_record([
            r.building.clone(),
            r.model.clone(),
            r.mode.as_str().to_string(),
            r.mae_norm.to_string(),
            r.mae_lph.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io("writing mae table", e))
}

/// Points of one building; the `model` column reads `<model>/<mode>`.
pub fn write_imputed_vs_actual<W: Write>(out: W, points: &[&ImputedPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = csv_err("writing imputed series");
    w.write_record(["timestamp", "actual", "imputed", "model"]).map_err(&err)?;
    for p in points {
        w.write_record([
            format_timestamp(&p.timestamp),
            p.actual.to_string(),
            p.imputed.to_string(),
            format!("{}/{}", p.model, p.mode.as_str()),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io("writing imputed series", e))
}

/// Markdown table of aggregate MAE per model, dedicated next to common.
pub fn summary_table(report: &EvaluationReport) -> String {
    let mut models: Vec<&str> = Vec::new();
    for a in &report.aggregates {
        if !models.contains(&a.model.as_str()) {
            models.push(&a.model);
        }
    }
    let cell = |model: &str, mode: Mode, lph: bool| {
        report
            .aggregate(model, mode)
            .map_or("-".to_string(), |a| format!("{:.3}", if lph { a.mae_lph } else { a.mae_norm }))
    };
    let mut s = String::new();
    s.push_str("| Model | MAE dedicated | MAE common | MAE dedicated (L/h) | MAE common (L/h) |\n");
    s.push_str("|---|---|---|---|---|\n");
    for m in models {
        let _ = writeln!(
            s,
            "| {m} | {} | {} | {} | {} |",
            cell(m, Mode::Dedicated, false),
            cell(m, Mode::Common, false),
            cell(m, Mode::Dedicated, true),
            cell(m, Mode::Common, true)
        );
    }
    s
}

/// Markdown census: building, rows (days), percentage of missing hours.
pub fn census_table(census: &[CensusRow]) -> String {
    let mut s = String::from("| Building | Rows | % missing |\n|---|---|---|\n");
    for c in census {
        let _ = writeln!(s, "| {} | {} | {:.1} |", c.building, c.days, c.missing_pct);
    }
    s
}
