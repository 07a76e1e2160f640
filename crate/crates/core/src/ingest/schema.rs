use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    Categorical,
    Numerical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrSpec {
    pub name: String,
    pub kind: AttrKind,
}

impl AttrSpec {
    pub fn categorical(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: AttrKind::Categorical,
        }
    }

    pub fn numerical(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: AttrKind::Numerical,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    /// RFC 3339, or `YYYY-MM-DD[ T]HH:MM:SS[.frac]` read as UTC.
    #[default]
    Iso8601,
    EpochSeconds,
}

/// Column mapping of an event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSchema {
    pub case_id_column: String,
    pub activity_column: String,
    pub start_time_column: String,
    pub complete_time_column: String,
    #[serde(default)]
    pub timestamp_format: TimestampFormat,
    #[serde(default)]
    pub universal_event_attrs: Vec<AttrSpec>,
    #[serde(default)]
    pub event_specific_attrs: Vec<AttrSpec>,
    #[serde(default)]
    pub sequence_attrs: Vec<AttrSpec>,
    pub label_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binning: Option<BinningPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix_length: Option<usize>,
}

impl LogSchema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: LogSchema =
            serde_json::from_str(text).map_err(|e| Error::schema(format!("schema JSON: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    /// Node-level attributes in encoding order (universal, then event-specific).
    pub fn event_attrs(&self) -> impl Iterator<Item = &AttrSpec> {
        self.universal_event_attrs.iter().chain(&self.event_specific_attrs)
    }

    pub fn all_columns(&self) -> Vec<&str> {
        let mut cols = vec![
            self.case_id_column.as_str(),
            self.activity_column.as_str(),
            self.start_time_column.as_str(),
            self.complete_time_column.as_str(),
            self.label_column.as_str(),
        ];
        cols.extend(self.event_attrs().map(|a| a.name.as_str()));
        cols.extend(self.sequence_attrs.iter().map(|a| a.name.as_str()));
        cols
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in self.all_columns() {
            if c.is_empty() {
                return Err(Error::schema("empty column name"));
            }
            if !seen.insert(c) {
                return Err(Error::schema(format!("column '{c}' is used more than once")));
            }
        }
        if let Some(b) = &self.binning {
            b.validate()?;
        }
        if self.prefix_length == Some(0) {
            return Err(Error::schema("prefix_length must be positive"));
        }
        Ok(())
    }
}

impl LogSchema {
    /// Column order of generated files: keys, attributes, label last.
    pub(crate) fn file_columns(&self) -> Vec<String> {
        let mut cols = vec![
            self.case_id_column.clone(),
            self.activity_column.clone(),
            self.start_time_column.clone(),
            self.complete_time_column.clone(),
        ];
        cols.extend(self.event_attrs().map(|a| a.name.clone()));
        cols.extend(self.sequence_attrs.iter().map(|a| a.name.clone()));
        cols.push(self.label_column.clone());
        cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

/// Predicate on a duration in minutes, written like `"< 5"` or `"== 1440"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BinRule {
    pub comparison: Comparison,
    pub threshold: f64,
}

impl BinRule {
    pub fn matches(&self, minutes: f64) -> bool {
        match self.comparison {
            Comparison::Lt => minutes < self.threshold,
            Comparison::Le => minutes <= self.threshold,
            Comparison::Eq => minutes == self.threshold,
            Comparison::Ge => minutes >= self.threshold,
            Comparison::Gt => minutes > self.threshold,
        }
    }
}

impl fmt::Display for BinRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.comparison {
            Comparison::Lt => "<",
            Comparison::Le => "<=",
            Comparison::Eq => "==",
            Comparison::Ge => ">=",
            Comparison::Gt => ">",
        };
        write!(f, "{op} {}", self.threshold)
    }
}

impl FromStr for BinRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        // longest operators first
        let ops = [
            ("<=", Comparison::Le),
            (">=", Comparison::Ge),
            ("==", Comparison::Eq),
            ("<", Comparison::Lt),
            (">", Comparison::Gt),
        ];
        for (token, comparison) in ops {
            if let Some(rest) = s.strip_prefix(token) {
                let threshold: f64 = rest
                    .trim()
                    .parse()
                    .map_err(|_| Error::schema(format!("bad threshold in bin rule '{s}'")))?;
                if !threshold.is_finite() {
                    return Err(Error::schema(format!("non-finite threshold in '{s}'")));
                }
                return Ok(BinRule {
                    comparison,
                    threshold,
                });
            }
        }
        Err(Error::schema(format!(
            "bin rule '{s}' must start with <, <=, ==, >= or >"
        )))
    }
}

impl TryFrom<String> for BinRule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BinRule> for String {
    fn from(r: BinRule) -> String {
        r.to_string()
    }
}

/// Durations matching `unique_bin_rule` get one bin per distinct value; the
/// rest share `n_quantile_bins` empirical-quantile bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningPolicy {
    pub unique_bin_rule: BinRule,
    pub n_quantile_bins: usize,
}

impl BinningPolicy {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: BinningPolicy =
            serde_json::from_str(text).map_err(|e| Error::schema(format!("binning JSON: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_quantile_bins == 0 {
            return Err(Error::schema("n_quantile_bins must be positive"));
        }
        Ok(())
    }
}

impl Default for BinningPolicy {
    fn default() -> Self {
        Self {
            unique_bin_rule: BinRule {
                comparison: Comparison::Lt,
                threshold: 5.0,
            },
            n_quantile_bins: 8,
        }
    }
}
