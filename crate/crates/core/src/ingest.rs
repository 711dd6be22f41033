//! CSV ingestion and emission of hourly series.
//!
//! Schema: `customer_id,timestamp,kwh` with an optional `role` column. Rows may
//! appear in any order; each customer's readings must form a contiguous hourly
//! run once sorted, unless gap filling is enabled.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{HourlySeries, Role, SeriesError};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{source_name}: {source}")]
    Io {
        source_name: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}, line {line}: {message}")]
    Row {
        source_name: String,
        line: u64,
        message: String,
    },
    #[error("{source_name}: missing required column `{column}`")]
    MissingColumn {
        source_name: String,
        column: &'static str,
    },
    #[error("{source_name}: no role column and no role implied for this input")]
    UnknownRole { source_name: String },
    #[error("{source_name}: customer `{customer}` is missing {missing} hour(s) after {after}")]
    Gap {
        source_name: String,
        customer: String,
        after: NaiveDateTime,
        missing: usize,
    },
    #[error("{source_name}: {source}")]
    Series {
        source_name: String,
        #[source]
        source: SeriesError,
    },
}

/// What to do with missing hours inside a customer's run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GapPolicy {
    #[default]
    Reject,
    /// Linear interpolation across gaps of at most `max_gap` hours.
    Interpolate { max_gap: usize },
}

impl GapPolicy {
    pub fn interpolate_short() -> Self {
        GapPolicy::Interpolate { max_gap: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct IngestedSeries {
    pub series: HourlySeries,
    /// Hours whose readings were interpolated rather than read.
    pub filled: Vec<NaiveDateTime>,
}

#[derive(Debug, Deserialize)]
struct Row {
    customer_id: String,
    timestamp: String,
    kwh: f64,
    #[serde(default)]
    role: Option<String>,
}

/// Accepts ISO-8601 date-times at hour resolution. An explicit UTC offset is
/// dropped and the local wall-clock time kept.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_local());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn read_series_file(
    path: &Path,
    expected: Option<Role>,
    gaps: GapPolicy,
) -> Result<Vec<IngestedSeries>, IngestError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| IngestError::Io {
        source_name: name.clone(),
        source,
    })?;
    read_series(file, &name, expected, gaps)
}

/// Parses every customer in the input. Output is ordered by customer id.
///
/// With `expected` set, a `role` column (if present) must agree with it.
pub fn read_series<R: Read>(
    reader: R,
    source_name: &str,
    expected: Option<Role>,
    gaps: GapPolicy,
) -> Result<Vec<IngestedSeries>, IngestError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| row_error(source_name, 1, e.to_string()))?
        .clone();
    for column in ["customer_id", "timestamp", "kwh"] {
        if !headers.iter().any(|h| h == column) {
            return Err(IngestError::MissingColumn {
                source_name: source_name.to_string(),
                column,
            });
        }
    }
    let has_role = headers.iter().any(|h| h == "role");
    if !has_role && expected.is_none() {
        return Err(IngestError::UnknownRole {
            source_name: source_name.to_string(),
        });
    }

    let mut grouped: BTreeMap<String, (Role, Vec<(u64, NaiveDateTime, f64)>)> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        match csv.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(row_error(source_name, line, e.to_string()));
            }
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| row_error(source_name, line, e.to_string()))?;
        let ts = parse_timestamp(&row.timestamp).ok_or_else(|| {
            row_error(source_name, line, format!("unparseable timestamp `{}`", row.timestamp))
        })?;
        if ts.minute() != 0 || ts.second() != 0 {
            return Err(row_error(
                source_name,
                line,
                format!("timestamp `{}` is not at hour resolution", row.timestamp),
            ));
        }
        if !row.kwh.is_finite() {
            return Err(row_error(source_name, line, "non-finite kwh reading".into()));
        }
        let role = match (&row.role, expected) {
            (Some(r), exp) => {
                let role: Role = r.parse().map_err(|m| row_error(source_name, line, m))?;
                if let Some(exp) = exp {
                    if exp != role {
                        return Err(row_error(
                            source_name,
                            line,
                            format!("role `{role}` where `{exp}` was expected"),
                        ));
                    }
                }
                role
            }
            (None, Some(exp)) => exp,
            (None, None) => unreachable!("checked above"),
        };
        let entry = grouped
            .entry(row.customer_id.clone())
            .or_insert_with(|| (role, Vec::new()));
        if entry.0 != role {
            return Err(row_error(
                source_name,
                line,
                format!("customer `{}` appears with roles `{}` and `{role}`", row.customer_id, entry.0),
            ));
        }
        entry.1.push((line, ts, row.kwh));
    }

    grouped
        .into_iter()
        .map(|(id, (role, mut rows))| assemble(source_name, id, role, &mut rows, gaps))
        .collect()
}

fn assemble(
    source_name: &str,
    id: String,
    role: Role,
    rows: &mut [(u64, NaiveDateTime, f64)],
    gaps: GapPolicy,
) -> Result<IngestedSeries, IngestError> {
    rows.sort_by_key(|r| r.1);
    let mut values = Vec::with_capacity(rows.len());
    let mut filled = Vec::new();
    for w in 0..rows.len() {
        let (line, ts, kwh) = rows[w];
        if w > 0 {
            let (_, prev_ts, prev_kwh) = rows[w - 1];
            let step = (ts - prev_ts).num_hours() as usize;
            if step == 0 {
                return Err(row_error(
                    source_name,
                    line,
                    format!("duplicate reading for `{id}` at {}", ts.format(TIMESTAMP_FORMAT)),
                ));
            }
            let missing = step - 1;
            if missing > 0 {
                match gaps {
                    GapPolicy::Interpolate { max_gap } if missing <= max_gap => {
                        for k in 1..=missing {
                            let frac = k as f64 / step as f64;
                            values.push(prev_kwh + frac * (kwh - prev_kwh));
                            filled.push(prev_ts + Duration::hours(k as i64));
                        }
                    }
                    _ => {
                        return Err(IngestError::Gap {
                            source_name: source_name.to_string(),
                            customer: id,
                            after: prev_ts,
                            missing,
                        })
                    }
                }
            }
        }
        values.push(kwh);
    }
    let series = HourlySeries::new(id, rows[0].1, values, role).map_err(|source| IngestError::Series {
        source_name: source_name.to_string(),
        source,
    })?;
    Ok(IngestedSeries { series, filled })
}

fn row_error(source_name: &str, line: u64, message: String) -> IngestError {
    IngestError::Row {
        source_name: source_name.to_string(),
        line,
        message,
    }
}

/// Writes series in the ingestion schema, values as stored. With `with_role`
/// the `role` column is appended.
pub fn write_series<W: Write>(writer: W, series: &[HourlySeries], with_role: bool) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    if with_role {
        out.write_record(["customer_id", "timestamp", "kwh", "role"])?;
    } else {
        out.write_record(["customer_id", "timestamp", "kwh"])?;
    }
    for s in series {
        let role = s.role().to_string();
        for (ts, v) in s.iter() {
            let ts = ts.format(TIMESTAMP_FORMAT).to_string();
            let v = v.to_string();
            if with_role {
                out.write_record([s.customer_id(), &ts, &v, &role])?;
            } else {
                out.write_record([s.customer_id(), &ts, &v])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_series_file(path: &Path, series: &[HourlySeries], with_role: bool) -> Result<(), IngestError> {
    let io = |source: std::io::Error| IngestError::Io {
        source_name: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    write_series(std::io::BufWriter::new(file), series, with_role)
        .map_err(|e| io(std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, expected: Option<Role>, gaps: GapPolicy) -> Result<Vec<IngestedSeries>, IngestError> {
        read_series(text.as_bytes(), "test.csv", expected, gaps)
    }

    #[test]
    fn reads_and_groups_customers() {
        let text = "customer_id,timestamp,kwh\n\
                    b,2021-01-01T01:00:00,2\n\
                    a,2021-01-01T00:00:00,1\n\
                    b,2021-01-01T00:00:00,1.5\n";
        let out = read(text, Some(Role::Native), GapPolicy::Reject).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].series.customer_id(), "a");
        assert_eq!(out[1].series.values(), &[1.5, 2.0]);
        assert_eq!(out[1].series.role(), Role::Native);
    }

    #[test]
    fn role_column_drives_roles() {
        let text = "customer_id,timestamp,kwh,role\n\
                    g,2021-01-01T00:00:00,0,generation\n\
                    n,2021-01-01T00:00:00,1,net\n";
        let out = read(text, None, GapPolicy::Reject).unwrap();
        assert_eq!(out[0].series.role(), Role::Generation);
        assert_eq!(out[1].series.role(), Role::Net);
        assert!(read(text, Some(Role::Net), GapPolicy::Reject).is_err());
    }

    #[test]
    fn corrupt_row_reports_line() {
        let text = "customer_id,timestamp,kwh\n\
                    a,2021-01-01T00:00:00,1\n\
                    a,2021-01-01T01:00:00,abc\n";
        match read(text, Some(Role::Native), GapPolicy::Reject) {
            Err(IngestError::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gaps_rejected_by_default_and_filled_on_request() {
        let text = "customer_id,timestamp,kwh\n\
                    a,2021-01-01T00:00:00,1\n\
                    a,2021-01-01T03:00:00,4\n";
        assert!(matches!(
            read(text, Some(Role::Native), GapPolicy::Reject),
            Err(IngestError::Gap { missing: 2, .. })
        ));
        let out = read(text, Some(Role::Native), GapPolicy::interpolate_short()).unwrap();
        assert_eq!(out[0].series.values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(out[0].filled.len(), 2);

        let long = "customer_id,timestamp,kwh\na,2021-01-01T00:00:00,1\na,2021-01-01T05:00:00,4\n";
        assert!(read(long, Some(Role::Native), GapPolicy::interpolate_short()).is_err());
    }

    #[test]
    fn duplicates_and_sub_hour_timestamps_rejected() {
        let dup = "customer_id,timestamp,kwh\na,2021-01-01T00:00:00,1\na,2021-01-01T00:00:00,1\n";
        assert!(matches!(read(dup, Some(Role::Native), GapPolicy::Reject), Err(IngestError::Row { .. })));
        let sub = "customer_id,timestamp,kwh\na,2021-01-01T00:30:00,1\n";
        assert!(matches!(read(sub, Some(Role::Native), GapPolicy::Reject), Err(IngestError::Row { .. })));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let text = "customer,timestamp,kwh\na,2021-01-01T00:00:00,1\n";
        assert!(matches!(
            read(text, Some(Role::Native), GapPolicy::Reject),
            Err(IngestError::MissingColumn { column: "customer_id", .. })
        ));
    }

    #[test]
    fn timestamp_variants() {
        let want = parse_timestamp("2021-03-04T05:00:00").unwrap();
        assert_eq!(parse_timestamp("2021-03-04 05:00"), Some(want));
        assert_eq!(parse_timestamp("2021-03-04T05:00:00-06:00"), Some(want));
        assert_eq!(parse_timestamp("2021-03-04T05:00:00Z"), Some(want));
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn write_then_read_preserves_values() {
        let start = parse_timestamp("2021-01-01T00:00:00").unwrap();
        let s = HourlySeries::new("x", start, vec![0.1, 1.0 / 3.0, 2.5e-7], Role::Net).unwrap();
        let mut buf = Vec::new();
        write_series(&mut buf, std::slice::from_ref(&s), true).unwrap();
        let back = read(std::str::from_utf8(&buf).unwrap(), None, GapPolicy::Reject).unwrap();
        assert_eq!(back[0].series, s);
    }
}
