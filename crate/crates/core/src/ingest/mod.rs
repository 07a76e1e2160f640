//! Event logs to encoded chain graphs.
//!
//! Each trace becomes a directed chain over its events in start-time order.
//! Node vectors concatenate the one-hot activity with the encoded event
//! attributes; edge weights are normalized start-time gaps, so events that
//! start together are joined by a zero-weight edge.

mod binning;
mod dataset;
mod encode;
mod parse;
mod schema;
mod split;
mod synth;

pub use binning::DurationBinner;
pub use dataset::{DatasetDims, EncodedDataset, SplitOptions, DATASET_FORMAT, DATASET_VERSION};
pub use encode::{AttrEncoder, EncodedGraph, EncoderState, GapScaler, MinMaxScaler};
pub use parse::{parse_log, parse_timestamp, Event, RawValue, Trace};
pub use schema::{AttrKind, AttrSpec, BinRule, BinningPolicy, Comparison, LogSchema, TimestampFormat};
pub use split::split_indices;
pub use synth::{class_counts, generate_synthetic_log, synthetic_schema, LabelRule, SyntheticLog, SyntheticSpec};

use crate::error::Result;

/// Fits encoders on training traces.
pub fn fit_encoders(traces: &[Trace], schema: &LogSchema, policy: &BinningPolicy) -> Result<EncoderState> {
    EncoderState::fit(traces, schema, policy)
}

/// Encodes one trace with fitted encoders.
pub fn encode_trace(trace: &Trace, state: &EncoderState, label: usize) -> Result<EncodedGraph> {
    state.encode(trace, label)
}
