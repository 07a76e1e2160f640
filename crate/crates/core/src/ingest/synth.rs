use std::fmt;
use std::str::FromStr;

use chrono::DateTime;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::parse::{parse_log, Trace};
use super::schema::{AttrSpec, BinningPolicy, LogSchema, TimestampFormat};

/// How a synthetic case's outcome is determined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Class `c > 0` contains its own marker activity; class 0 contains none.
    Presence,
    /// Class is `floor(total minutes / 120)`.
    TotalDuration,
    /// Class is `floor(amount / 100)` of the case-level amount.
    GraphAttribute,
}

impl LabelRule {
    pub const ALL: [LabelRule; 3] = [LabelRule::Presence, LabelRule::TotalDuration, LabelRule::GraphAttribute];

    pub fn name(self) -> &'static str {
        match self {
            LabelRule::Presence => "presence",
            LabelRule::TotalDuration => "total_duration",
            LabelRule::GraphAttribute => "graph_attribute",
        }
    }
}

impl fmt::Display for LabelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LabelRule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::config(format!("unknown label rule '{s}' (presence, total_duration, graph_attribute)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_cases: usize,
    pub n_activities: usize,
    pub n_classes: usize,
    /// Majority-to-minority class size ratio.
    pub imbalance_ratio: f64,
    pub rule: LabelRule,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_cases: 200,
            n_activities: 8,
            n_classes: 2,
            imbalance_ratio: 1.0,
            rule: LabelRule::Presence,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticLog {
    pub schema: LogSchema,
    pub csv: String,
    pub traces: Vec<Trace>,
}

/// Class sizes whose weights fall quadratically from `ratio` (class 0) to
/// 1 (last class), rounded by largest remainder.
pub fn class_counts(n_cases: usize, n_classes: usize, ratio: f64) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return Err(Error::config("at least 2 classes are required"));
    }
    if !ratio.is_finite() || ratio < 1.0 {
        return Err(Error::config(format!("imbalance ratio {ratio} must be a finite value >= 1")));
    }
    let top = ratio.sqrt();
    let weights: Vec<f64> = (0..n_classes)
        .map(|c| {
            let a = top + (1.0 - top) * c as f64 / (n_classes - 1) as f64;
            a * a
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n_cases as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n_cases - counts.iter().sum::<usize>();
    for &c in order.iter().take(short) {
        counts[c] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::config(format!(
            "imbalance ratio {ratio} leaves a class empty with {n_cases} cases and {n_classes} classes"
        )));
    }
    Ok(counts)
}

pub fn synthetic_schema() -> LogSchema {
    LogSchema {
        case_id_column: "case_id".into(),
        activity_column: "activity".into(),
        start_time_column: "start_time".into(),
        complete_time_column: "complete_time".into(),
        timestamp_format: TimestampFormat::Iso8601,
        universal_event_attrs: vec![AttrSpec::categorical("resource"), AttrSpec::numerical("effort")],
        event_specific_attrs: vec![AttrSpec::numerical("cost")],
        sequence_attrs: vec![AttrSpec::categorical("channel"), AttrSpec::numerical("amount")],
        label_column: "outcome".into(),
        binning: Some(BinningPolicy::default()),
        prefix_length: None,
    }
}

const BASE_EPOCH: i64 = 1_704_067_200; // 2024-01-01T00:00:00Z
const RESOURCES: [&str; 5] = ["R1", "R2", "R3", "R4", "R5"];
const CHANNELS: [&str; 3] = ["mail", "phone", "web"];

fn iso(secs: i64) -> String {
    DateTime::from_timestamp(secs, 0)
        .expect("timestamp in range")
        .format("%Y-%m-%dT%H:%M:%SZ")
        .to_string()
}

fn activity_name(i: usize) -> String {
    format!("act_{i:02}")
}

/// Splits `total` minutes into `parts` positive integers.
fn split_minutes(total: i64, parts: usize, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let spare = total - parts as i64;
    let weights: Vec<f64> = (0..parts).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = weights.iter().sum();
    let mut out: Vec<i64> = weights.iter().map(|w| 1 + (w / sum * spare as f64).floor() as i64).collect();
    let used: i64 = out.iter().sum();
    out[parts - 1] += total - used;
    out
}

fn random_duration(rng: &mut ChaCha8Rng) -> i64 {
    if rng.random_bool(0.2) {
        rng.random_range(1..5)
    } else {
        rng.random_range(5..=120)
    }
}

/// Generates a labelled event log. The same spec always yields the same
/// bytes.
pub fn generate_synthetic_log(spec: &SyntheticSpec) -> Result<SyntheticLog> {
    if spec.n_cases < 10 {
        return Err(Error::config("n_cases must be at least 10"));
    }
    if spec.n_activities < 2 {
        return Err(Error::config("n_activities must be at least 2"));
    }
    if spec.rule == LabelRule::Presence && spec.n_activities < spec.n_classes {
        return Err(Error::config("the presence rule needs n_activities >= n_classes"));
    }
    let counts = class_counts(spec.n_cases, spec.n_classes, spec.imbalance_ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
    labels.shuffle(&mut rng);

    let schema = synthetic_schema();
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(schema.file_columns())?;

    let markers = spec.n_classes - 1;
    let plain_activities = spec.n_activities.saturating_sub(markers);
    for (case, &class) in labels.iter().enumerate() {
        let n_events: usize = rng.random_range(3..=6);
        let mut activities: Vec<usize> = match spec.rule {
            LabelRule::Presence => {
                let mut acts: Vec<usize> = (0..n_events).map(|_| rng.random_range(0..plain_activities)).collect();
                if class > 0 {
                    let slot = rng.random_range(0..n_events);
                    acts[slot] = plain_activities + class - 1;
                }
                acts
            }
            _ => (0..n_events).map(|_| rng.random_range(0..spec.n_activities)).collect(),
        };
        let durations: Vec<i64> = match spec.rule {
            LabelRule::TotalDuration => {
                let c = class as i64;
                let total = rng.random_range(120 * c + 15..=120 * c + 105);
                split_minutes(total, n_events, &mut rng)
            }
            _ => (0..n_events).map(|_| random_duration(&mut rng)).collect(),
        };
        let amount = match spec.rule {
            LabelRule::GraphAttribute => rng.random_range(100 * class + 10..=100 * class + 90) as f64,
            _ => rng.random_range(10..=100 * spec.n_classes - 10) as f64,
        };
        let channel = CHANNELS[rng.random_range(0..CHANNELS.len())];
        let case_id = format!("case_{case:05}");
        let outcome = format!("class_{class}");

        let mut start = BASE_EPOCH + 60 * rng.random_range(0..60 * 24 * 365);
        for (i, act) in activities.drain(..).enumerate() {
            if i > 0 && !rng.random_bool(0.1) {
                start += 60 * (durations[i - 1] + rng.random_range(0..=30));
            }
            let complete = start + 60 * durations[i];
            let resource = RESOURCES[rng.random_range(0..RESOURCES.len())];
            let cost = if rng.random_bool(0.3) {
                String::new()
            } else {
                format!("{:.2}", rng.random_range(5.0..500.0))
            };
            writer.write_record([
                case_id.as_str(),
                &activity_name(act),
                &iso(start),
                &iso(complete),
                resource,
                &durations[i].to_string(),
                &cost,
                channel,
                &format!("{amount}"),
                &outcome,
            ])?;
        }
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let csv = String::from_utf8(bytes).expect("csv output is utf-8");
    let traces = parse_log(csv.as_bytes(), &schema)?;
    Ok(SyntheticLog { schema, csv, traces })
}
