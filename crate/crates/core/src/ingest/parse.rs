use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::schema::{AttrKind, AttrSpec, LogSchema, TimestampFormat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RawValue {
    Missing,
    Text(String),
    Number(f64),
}

impl RawValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            RawValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            RawValue::Number(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub activity: Option<String>,
    /// Seconds since the Unix epoch.
    pub start: f64,
    pub complete: f64,
    pub attrs: BTreeMap<String, RawValue>,
}

impl Event {
    /// Duration rounded to the nearest whole minute.
    pub fn duration_minutes(&self) -> i64 {
        ((self.complete - self.start) / 60.0).round() as i64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub case_id: String,
    /// Sorted by start time; ties keep file order.
    pub events: Vec<Event>,
    pub sequence: BTreeMap<String, RawValue>,
    pub label: String,
}

impl Trace {
    /// The first `k` events (or all of them).
    pub fn prefix(&self, k: usize) -> Trace {
        let mut t = self.clone();
        t.events.truncate(k.max(1));
        t
    }
}

pub fn parse_timestamp(raw: &str, format: TimestampFormat) -> Option<f64> {
    let raw = raw.trim();
    match format {
        TimestampFormat::EpochSeconds => raw.parse::<f64>().ok().filter(|v| v.is_finite()),
        TimestampFormat::Iso8601 => {
            if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
                return Some(instant_seconds(dt.timestamp(), dt.timestamp_subsec_nanos()));
            }
            for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
                if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
                    let utc = dt.and_utc();
                    return Some(instant_seconds(utc.timestamp(), utc.timestamp_subsec_nanos()));
                }
            }
            NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .map(|dt| dt.and_utc().timestamp() as f64)
        }
    }
}

fn instant_seconds(secs: i64, nanos: u32) -> f64 {
    secs as f64 + f64::from(nanos) * 1e-9
}

fn parse_value(raw: &str, spec: &AttrSpec, line: usize) -> Result<RawValue> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(RawValue::Missing);
    }
    match spec.kind {
        AttrKind::Categorical => Ok(RawValue::Text(raw.to_string())),
        AttrKind::Numerical => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(RawValue::Number)
            .ok_or_else(|| Error::Row {
                line,
                message: format!("column '{}': '{raw}' is not a number", spec.name),
            }),
    }
}

/// Reads a CSV event log and groups it into traces.
///
/// Cases appear in first-occurrence order. Sequence attributes and the
/// label are read from each case's first row.
pub fn parse_log<R: Read>(source: R, schema: &LogSchema) -> Result<Vec<Trace>> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(source);
    let headers = reader.headers()?.clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let col = |name: &str| -> Result<usize> {
        position
            .get(name)
            .copied()
            .ok_or_else(|| Error::schema(format!("missing column '{name}'")))
    };
    let case_col = col(&schema.case_id_column)?;
    let act_col = col(&schema.activity_column)?;
    let start_col = col(&schema.start_time_column)?;
    let end_col = col(&schema.complete_time_column)?;
    let label_col = col(&schema.label_column)?;
    let event_cols: Vec<(AttrSpec, usize)> = schema
        .event_attrs()
        .map(|a| Ok((a.clone(), col(&a.name)?)))
        .collect::<Result<_>>()?;
    let seq_cols: Vec<(AttrSpec, usize)> = schema
        .sequence_attrs
        .iter()
        .map(|a| Ok((a.clone(), col(&a.name)?)))
        .collect::<Result<_>>()?;

    let mut traces: Vec<Trace> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("");
        let case_id = field(case_col).trim();
        if case_id.is_empty() {
            return Err(Error::Row {
                line,
                message: "empty case id".into(),
            });
        }
        let timestamp = |i: usize, name: &str| {
            parse_timestamp(field(i), schema.timestamp_format).ok_or_else(|| Error::Row {
                line,
                message: format!("column '{name}': cannot parse timestamp '{}'", field(i)),
            })
        };
        let start = timestamp(start_col, &schema.start_time_column)?;
        let complete = timestamp(end_col, &schema.complete_time_column)?;
        let activity = Some(field(act_col).trim()).filter(|s| !s.is_empty()).map(str::to_string);
        let mut attrs = BTreeMap::new();
        for (spec, i) in &event_cols {
            attrs.insert(spec.name.clone(), parse_value(field(*i), spec, line)?);
        }
        let event = Event {
            activity,
            start,
            complete,
            attrs,
        };
        match index.get(case_id) {
            Some(&t) => traces[t].events.push(event),
            None => {
                let mut sequence = BTreeMap::new();
                for (spec, i) in &seq_cols {
                    sequence.insert(spec.name.clone(), parse_value(field(*i), spec, line)?);
                }
                index.insert(case_id.to_string(), traces.len());
                traces.push(Trace {
                    case_id: case_id.to_string(),
                    events: vec![event],
                    sequence,
                    label: field(label_col).trim().to_string(),
                });
            }
        }
    }
    for t in &mut traces {
        // stable: ties keep file order
        t.events.sort_by(|a, b| a.start.total_cmp(&b.start));
        if t.events.is_empty() {
            return Err(Error::contract(format!("case '{}' has no events", t.case_id)));
        }
    }
    Ok(traces)
}
