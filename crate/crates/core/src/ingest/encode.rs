use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::binning::DurationBinner;
use super::parse::{RawValue, Trace};
use super::schema::{AttrKind, AttrSpec, BinningPolicy, LogSchema};

/// Min-max scaler with a median for imputation. A constant attribute
/// (`min == max`) scales every value to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

impl MinMaxScaler {
    /// Fits on the given values; an empty sample yields the all-zero scaler.
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                min: 0.0,
                max: 0.0,
                median: 0.0,
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            min: sorted[0],
            max: sorted[n - 1],
            median,
        }
    }

    /// Scaled value clamped to `[0, 1]`; `None` is imputed with the median.
    pub fn transform(&self, value: Option<f64>) -> f64 {
        let v = value.unwrap_or(self.median);
        let range = self.max - self.min;
        if range <= 0.0 {
            return 0.0;
        }
        ((v - self.min) / range).clamp(0.0, 1.0)
    }
}

/// Normalizes start-time gaps; a zero gap is always exactly 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapScaler {
    pub min: f64,
    pub max: f64,
}

impl GapScaler {
    pub fn fit(gaps: &[f64]) -> Self {
        if gaps.is_empty() {
            return Self { min: 0.0, max: 0.0 };
        }
        let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
        let max = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { min, max }
    }

    pub fn transform(&self, gap: f64) -> f64 {
        let range = self.max - self.min;
        if gap <= 0.0 || range <= 0.0 {
            return 0.0;
        }
        ((gap - self.min) / range).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttrEncoder {
    Categorical { name: String, vocab: Vec<String> },
    Numerical { name: String, scaler: MinMaxScaler },
}

impl AttrEncoder {
    fn fit<'a>(spec: &AttrSpec, values: impl Iterator<Item = &'a RawValue>) -> Self {
        match spec.kind {
            AttrKind::Categorical => {
                let vocab: BTreeSet<String> = values.filter_map(|v| v.as_text().map(str::to_string)).collect();
                AttrEncoder::Categorical {
                    name: spec.name.clone(),
                    vocab: vocab.into_iter().collect(),
                }
            }
            AttrKind::Numerical => {
                let xs: Vec<f64> = values.filter_map(RawValue::as_number).collect();
                AttrEncoder::Numerical {
                    name: spec.name.clone(),
                    scaler: MinMaxScaler::fit(&xs),
                }
            }
        }
    }

    pub fn name(&self) -> &str {
        match self {
            AttrEncoder::Categorical { name, .. } | AttrEncoder::Numerical { name, .. } => name,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            AttrEncoder::Categorical { vocab, .. } => vocab.len(),
            AttrEncoder::Numerical { .. } => 1,
        }
    }

    /// Writes the encoding into `out` (length `width()`); returns true when
    /// the block is padding (missing or unseen categorical level).
    fn encode_into(&self, value: Option<&RawValue>, out: &mut [f64]) -> bool {
        match self {
            AttrEncoder::Categorical { vocab, .. } => {
                out.fill(0.0);
                let index = value
                    .and_then(RawValue::as_text)
                    .and_then(|s| vocab.binary_search_by(|v| v.as_str().cmp(s)).ok());
                match index {
                    Some(i) => {
                        out[i] = 1.0;
                        false
                    }
                    None => true,
                }
            }
            AttrEncoder::Numerical { scaler, .. } => {
                out[0] = scaler.transform(value.and_then(RawValue::as_number));
                false
            }
        }
    }
}

/// One trace as a chain graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedGraph {
    /// `n × d_node`.
    pub node_features: Matrix,
    /// Row 0 holds sources, row 1 targets; edges `i → i+1`.
    pub edge_index: [Vec<usize>; 2],
    pub edge_weights: Vec<f64>,
    pub graph_features: Vec<f64>,
    pub label: usize,
    /// `None` for a missing or unseen activity.
    pub activity_ids: Vec<Option<usize>>,
    pub duration_bins: Vec<usize>,
    /// Row-major `n × d_node`; true marks padding.
    pub feature_mask: Vec<bool>,
}

impl EncodedGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn d_node(&self) -> usize {
        self.node_features.cols()
    }

    pub fn is_masked(&self, node: usize, col: usize) -> bool {
        self.feature_mask[node * self.d_node() + col]
    }
}

/// Encoders fitted on training traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub activities: Vec<String>,
    pub event_attrs: Vec<AttrEncoder>,
    pub sequence_attrs: Vec<AttrEncoder>,
    pub gaps: GapScaler,
    pub binner: DurationBinner,
}

impl EncoderState {
    pub fn fit(traces: &[Trace], schema: &LogSchema, policy: &BinningPolicy) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::contract("cannot fit encoders on zero traces"));
        }
        let events = || traces.iter().flat_map(|t| &t.events);
        let activities: BTreeSet<String> = events().filter_map(|e| e.activity.clone()).collect();
        let event_attrs = schema
            .event_attrs()
            .map(|spec| AttrEncoder::fit(spec, events().filter_map(|e| e.attrs.get(&spec.name))))
            .collect();
        let sequence_attrs = schema
            .sequence_attrs
            .iter()
            .map(|spec| AttrEncoder::fit(spec, traces.iter().filter_map(|t| t.sequence.get(&spec.name))))
            .collect();
        let gaps: Vec<f64> = traces
            .iter()
            .flat_map(|t| t.events.windows(2).map(|w| w[1].start - w[0].start))
            .collect();
        let durations: Vec<i64> = events().map(|e| e.duration_minutes()).collect();
        Ok(Self {
            activities: activities.into_iter().collect(),
            event_attrs,
            sequence_attrs,
            gaps: GapScaler::fit(&gaps),
            binner: DurationBinner::fit(&durations, policy)?,
        })
    }

    pub fn n_activities(&self) -> usize {
        self.activities.len()
    }

    pub fn d_node(&self) -> usize {
        self.n_activities() + self.event_attrs.iter().map(AttrEncoder::width).sum::<usize>()
    }

    pub fn d_graph(&self) -> usize {
        self.sequence_attrs.iter().map(AttrEncoder::width).sum()
    }

    pub fn n_bins(&self) -> usize {
        self.binner.n_bins()
    }

    pub fn activity_index(&self, activity: Option<&str>) -> Option<usize> {
        let a = activity?;
        self.activities.binary_search_by(|v| v.as_str().cmp(a)).ok()
    }

    /// Encodes one trace; `label` is its class index.
    pub fn encode(&self, trace: &Trace, label: usize) -> Result<EncodedGraph> {
        let n = trace.events.len();
        if n == 0 {
            return Err(Error::contract(format!("case '{}' has no events", trace.case_id)));
        }
        let d = self.d_node();
        let n_act = self.n_activities();
        let mut node_features = Matrix::zeros(n, d);
        let mut feature_mask = vec![false; n * d];
        let mut activity_ids = Vec::with_capacity(n);
        let mut duration_bins = Vec::with_capacity(n);
        for (i, event) in trace.events.iter().enumerate() {
            let row = node_features.row_mut(i);
            let mask = &mut feature_mask[i * d..(i + 1) * d];
            let act = self.activity_index(event.activity.as_deref());
            match act {
                Some(a) => row[a] = 1.0,
                None => mask[..n_act].fill(true),
            }
            activity_ids.push(act);
            let mut offset = n_act;
            for enc in &self.event_attrs {
                let w = enc.width();
                if enc.encode_into(event.attrs.get(enc.name()), &mut row[offset..offset + w]) {
                    mask[offset..offset + w].fill(true);
                }
                offset += w;
            }
            duration_bins.push(self.binner.bin(event.duration_minutes()));
        }
        let edge_weights = trace
            .events
            .windows(2)
            .map(|w| self.gaps.transform(w[1].start - w[0].start))
            .collect();
        let edge_index = [(0..n - 1).collect(), (1..n).collect()];

        let mut graph_features = vec![0.0; self.d_graph()];
        let mut offset = 0;
        for enc in &self.sequence_attrs {
            let w = enc.width();
            enc.encode_into(trace.sequence.get(enc.name()), &mut graph_features[offset..offset + w]);
            offset += w;
        }
        Ok(EncodedGraph {
            node_features,
            edge_index,
            edge_weights,
            graph_features,
            label,
            activity_ids,
            duration_bins,
            feature_mask,
        })
    }
}
