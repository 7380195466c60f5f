//! Reading ingestion: CSV parsing and differencing of cumulative registers
//! into hourly consumption.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::data::{HourlySeries, RawReading};
use crate::error::{Error, Result};

pub const READINGS_HEADER: [&str; 3] = ["building_id", "timestamp", "register_liters"];

/// How a register decrease (meter reset or replacement) is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResetPolicy {
    /// Mark the hour missing and record an event.
    #[default]
    Flag,
    Error,
    /// Record zero consumption for the hour and an event.
    ClampZero,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub reset_policy: ResetPolicy,
    /// Half-open `[start, end)` range of hours to emit. Defaults to the hour
    /// after the first reading through the hour of the last reading.
    pub window: Option<(DateTime<Utc>, DateTime<Utc>)>,
}

/// Input dialect. Only the delimiter varies; the header is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadingsFormat {
    pub delimiter: u8,
}

impl Default for ReadingsFormat {
    fn default() -> Self {
        Self { delimiter: b',' }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedLine {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParsedReadings {
    pub readings: Vec<RawReading>,
    pub malformed: Vec<MalformedLine>,
    pub duplicates_dropped: usize,
}

/// Parses the readings CSV. Lines that cannot be parsed are skipped and
/// listed in `malformed`; a negative register aborts the parse.
pub fn parse_readings<R: Read>(input: R, format: &ReadingsFormat) -> Result<ParsedReadings> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers().map_err(|e| Error::BadHeader {
        expected: READINGS_HEADER.join(","),
        found: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != READINGS_HEADER {
        return Err(Error::BadHeader {
            expected: READINGS_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut readings = Vec::new();
    let mut malformed = Vec::new();
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                malformed.push(MalformedLine {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        match parse_record(&record, line)? {
            Ok(r) => readings.push(r),
            Err(reason) => malformed.push(MalformedLine { line, reason }),
        }
    }

    readings.sort_by(|a, b| {
        a.building_id
            .cmp(&b.building_id)
            .then(a.timestamp.cmp(&b.timestamp))
    });
    let before = readings.len();
    let mut deduped: Vec<RawReading> = Vec::with_capacity(before);
    for r in readings {
        if let Some(last) = deduped.last() {
            if last.building_id == r.building_id && last.timestamp == r.timestamp {
                if last.register.to_bits() == r.register.to_bits() {
                    continue;
                }
                return Err(Error::ConflictingDuplicate {
                    building: r.building_id,
                    timestamp: format_timestamp(&r.timestamp),
                    first: last.register,
                    second: r.register,
                });
            }
        }
        deduped.push(r);
    }
    let duplicates_dropped = before - deduped.len();
    Ok(ParsedReadings {
        readings: deduped,
        malformed,
        duplicates_dropped,
    })
}

// Outer error aborts the parse, inner error marks the line malformed.
fn parse_record(record: &csv::StringRecord, line: u64) -> Result<std::result::Result<RawReading, String>> {
    if record.len() != 3 {
        return Ok(Err(format!("expected 3 fields, found {}", record.len())));
    }
    let building = record[0].to_string();
    if building.is_empty() {
        return Ok(Err("empty building_id".into()));
    }
    let timestamp = match DateTime::parse_from_rfc3339(&record[1]) {
        Ok(t) => t.with_timezone(&Utc),
        Err(e) => return Ok(Err(format!("bad timestamp `{}`: {e}", &record[1]))),
    };
    let register: f64 = match record[2].parse() {
        Ok(v) => v,
        Err(_) => return Ok(Err(format!("bad register `{}`", &record[2]))),
    };
    if !register.is_finite() {
        return Ok(Err(format!("non-finite register `{}`", &record[2])));
    }
    if register < 0.0 {
        return Err(Error::NegativeRegister {
            line,
            value: register,
        });
    }
    Ok(Ok(RawReading::new(building, timestamp, register)))
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn write_readings<W: Write>(out: W, readings: &[RawReading]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::io("writing readings", e.into());
    w.write_record(READINGS_HEADER).map_err(wrap)?;
    for r in readings {
        w.write_record([
            r.building_id.as_str(),
            &format_timestamp(&r.timestamp),
            &r.register.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("writing readings", e))
}

/// Groups sorted readings by building, preserving order.
pub fn by_building(readings: &[RawReading]) -> BTreeMap<String, Vec<RawReading>> {
    let mut out: BTreeMap<String, Vec<RawReading>> = BTreeMap::new();
    for r in readings {
        out.entry(r.building_id.clone()).or_default().push(r.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetEvent {
    pub hour: DateTime<Utc>,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub series: HourlySeries,
    pub resets: Vec<ResetEvent>,
}

fn hour_index(t: &DateTime<Utc>) -> i64 {
    t.timestamp().div_euclid(3600)
}

fn hour_start(index: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(index * 3600, 0).single().expect("hour index in range")
}

/// Differences one building's cumulative register into hourly consumption,
/// anchoring each hour on the last reading inside it.
pub fn hourly_aggregate(readings: &[RawReading], opts: &IngestOptions) -> Result<Aggregation> {
    let first = readings.first().ok_or(Error::EmptySeries)?;
    for (i, pair) in readings.windows(2).enumerate() {
        if pair[1].building_id != pair[0].building_id || pair[1].timestamp <= pair[0].timestamp {
            return Err(Error::UnsortedInput { index: i + 1 });
        }
    }

    // last register per hour
    let mut buckets: BTreeMap<i64, f64> = BTreeMap::new();
    for r in readings {
        buckets.insert(hour_index(&r.timestamp), r.register);
    }
    let (start, end) = match opts.window {
        Some((s, e)) => {
            if s >= e {
                return Err(Error::Config("ingest window start must precede end".into()));
            }
            // round the start down and the end up to whole hours
            let end = hour_index(&e) + i64::from(e.timestamp() % 3600 != 0);
            (hour_index(&s), end)
        }
        None => {
            let last = readings.last().expect("non-empty");
            (hour_index(&first.timestamp) + 1, hour_index(&last.timestamp) + 1)
        }
    };

    let mut values = Vec::with_capacity((end - start).max(0) as usize);
    let mut resets = Vec::new();
    for h in start..end {
        let slot = match (buckets.get(&(h - 1)), buckets.get(&h)) {
            (Some(&prev), Some(&cur)) if cur >= prev => Some(cur - prev),
            (Some(&prev), Some(&cur)) => {
                let event = ResetEvent {
                    hour: hour_start(h),
                    from: prev,
                    to: cur,
                };
                match opts.reset_policy {
                    ResetPolicy::Error => {
                        return Err(Error::RegisterReset {
                            hour: format_timestamp(&event.hour),
                            from: prev,
                            to: cur,
                        })
                    }
                    ResetPolicy::Flag => {
                        resets.push(event);
                        None
                    }
                    ResetPolicy::ClampZero => {
                        resets.push(event);
                        Some(0.0)
                    }
                }
            }
            _ => None,
        };
        values.push(slot);
    }
    Ok(Aggregation {
        series: HourlySeries::new(first.building_id.clone(), hour_start(start), values)?,
        resets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildingIngest {
    pub building_id: String,
    pub readings: usize,
    pub hours: usize,
    pub missing_hours: usize,
    pub resets: Vec<ResetEvent>,
}

/// Summary written next to the hourly output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub total_readings: usize,
    pub duplicates_dropped: usize,
    pub malformed: Vec<MalformedLine>,
    pub buildings: Vec<BuildingIngest>,
}

/// Aggregates every building in `parsed` and assembles the ingest report.
pub fn ingest_all(parsed: &ParsedReadings, opts: &IngestOptions) -> Result<(Vec<HourlySeries>, IngestReport)> {
    let mut series = Vec::new();
    let mut buildings = Vec::new();
    for (id, readings) in by_building(&parsed.readings) {
        let agg = hourly_aggregate(&readings, opts)?;
        buildings.push(BuildingIngest {
            building_id: id,
            readings: readings.len(),
            hours: agg.series.len(),
            missing_hours: agg.series.missing_count(),
            resets: agg.resets,
        });
        series.push(agg.series);
    }
    let report = IngestReport {
        total_readings: parsed.readings.len(),
        duplicates_dropped: parsed.duplicates_dropped,
        malformed: parsed.malformed.clone(),
        buildings,
    };
    Ok((series, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;

    fn h(i: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2022, 5, 2, 0, 0, 0).unwrap() + Duration::hours(i)
    }

    fn at(hour: i64, minute: i64, reg: f64) -> RawReading {
        RawReading::new("b1", h(hour) + Duration::minutes(minute), reg)
    }

    #[test]
    fn parses_and_sorts() {
        let csv = "building_id,timestamp,register_liters\n\
                   b1,2022-05-02T02:10:00Z,110\n\
                   b1,2022-05-02T00:10:00Z,100\n\
                   b1,2022-05-02T01:10:00+00:00,103\n";
        let parsed = parse_readings(csv.as_bytes(), &ReadingsFormat::default()).unwrap();
        let regs: Vec<f64> = parsed.readings.iter().map(|r| r.register).collect();
        assert_eq!(regs, vec![100.0, 103.0, 110.0]);
        assert!(parsed.malformed.is_empty());
    }

    #[test]
    fn negative_register_names_line() {
        let csv = "building_id,timestamp,register_liters\n\
                   b1,2022-05-02T00:10:00Z,100\n\
                   b1,2022-05-02T01:10:00Z,-5\n";
        match parse_readings(csv.as_bytes(), &ReadingsFormat::default()) {
            Err(Error::NegativeRegister { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_header_and_malformed_lines() {
        let err = parse_readings("id,ts,reg\n".as_bytes(), &ReadingsFormat::default()).unwrap_err();
        assert_eq!(err.code(), "bad-header");

        let csv = "building_id,timestamp,register_liters\n\
                   b1,yesterday,100\n\
                   b1,2022-05-02T01:10:00Z,abc\n\
                   b1,2022-05-02T01:10:00Z,1\n";
        let parsed = parse_readings(csv.as_bytes(), &ReadingsFormat::default()).unwrap();
        assert_eq!(parsed.readings.len(), 1);
        let lines: Vec<u64> = parsed.malformed.iter().map(|m| m.line).collect();
        assert_eq!(lines, vec![2, 3]);
    }

    #[test]
    fn duplicates() {
        let csv = "building_id,timestamp,register_liters\n\
                   b1,2022-05-02T00:10:00Z,100\n\
                   b1,2022-05-02T00:10:00Z,100\n";
        let parsed = parse_readings(csv.as_bytes(), &ReadingsFormat::default()).unwrap();
        assert_eq!(parsed.readings.len(), 1);
        assert_eq!(parsed.duplicates_dropped, 1);

        let csv = "building_id,timestamp,register_liters\n\
                   b1,2022-05-02T00:10:00Z,100\n\
                   b1,2022-05-02T00:10:00Z,101\n";
        let err = parse_readings(csv.as_bytes(), &ReadingsFormat::default()).unwrap_err();
        assert_eq!(err.code(), "conflicting-duplicate");
    }

    #[test]
    fn differences_last_reading_per_hour() {
        let readings = vec![at(0, 30, 100.0), at(1, 5, 101.0), at(1, 50, 103.0), at(2, 20, 110.0)];
        let agg = hourly_aggregate(&readings, &IngestOptions::default()).unwrap();
        assert_eq!(agg.series.start_hour, h(1));
        assert_eq!(agg.series.values, vec![Some(3.0), Some(7.0)]);
    }

    #[test]
    fn gap_hides_both_sides() {
        let readings = vec![at(0, 30, 100.0), at(2, 30, 110.0)];
        let agg = hourly_aggregate(&readings, &IngestOptions::default()).unwrap();
        assert_eq!(agg.series.values, vec![None, None]);
    }

    #[test]
    fn reset_policies() {
        let readings = vec![at(2, 0, 100.0), at(3, 0, 110.0), at(4, 0, 40.0), at(5, 0, 45.0)];
        let flag = hourly_aggregate(&readings, &IngestOptions::default()).unwrap();
        assert_eq!(flag.series.values, vec![Some(10.0), None, Some(5.0)]);
        assert_eq!(flag.resets.len(), 1);
        assert_eq!(flag.resets[0].hour, h(4));

        let clamp = IngestOptions {
            reset_policy: ResetPolicy::ClampZero,
            ..Default::default()
        };
        let agg = hourly_aggregate(&readings, &clamp).unwrap();
        assert_eq!(agg.series.values, vec![Some(10.0), Some(0.0), Some(5.0)]);

        let strict = IngestOptions {
            reset_policy: ResetPolicy::Error,
            ..Default::default()
        };
        assert_eq!(hourly_aggregate(&readings, &strict).unwrap_err().code(), "register-reset");
    }

    #[test]
    fn unsorted_and_window() {
        let readings = vec![at(1, 0, 1.0), at(0, 0, 0.0)];
        assert_eq!(
            hourly_aggregate(&readings, &IngestOptions::default()).unwrap_err().code(),
            "unsorted-input"
        );
        let readings = vec![at(0, 0, 0.0), at(1, 0, 2.0), at(2, 0, 5.0)];
        let opts = IngestOptions {
            window: Some((h(0), h(4))),
            ..Default::default()
        };
        let agg = hourly_aggregate(&readings, &opts).unwrap();
        assert_eq!(agg.series.values, vec![None, Some(2.0), Some(3.0), None]);
    }

    #[test]
    fn hourly_registers_are_adjacent_differences() {
        let regs = [0.0, 4.5, 4.5, 10.0, 11.25, 30.0];
        let readings: Vec<_> = regs.iter().enumerate().map(|(i, &r)| at(i as i64, 0, r)).collect();
        let agg = hourly_aggregate(&readings, &IngestOptions::default()).unwrap();
        let expect: Vec<_> = regs.windows(2).map(|w| Some(w[1] - w[0])).collect();
        assert_eq!(agg.series.values, expect);
    }
}
