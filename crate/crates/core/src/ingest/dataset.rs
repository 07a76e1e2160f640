use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::encode::{EncodedGraph, EncoderState};
use super::parse::Trace;
use super::schema::LogSchema;
use super::split::split_indices;

pub const DATASET_FORMAT: &str = "hgnn-encoded-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDims {
    pub d_node: usize,
    pub d_graph: usize,
    pub n_bins: usize,
    pub n_activities: usize,
    pub n_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
    /// Overrides the schema's prefix length.
    pub prefix_length: Option<usize>,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            stratified: true,
            seed: 0,
            prefix_length: None,
        }
    }
}

/// Encoded train and validation graphs with everything needed to encode
/// more traces the same way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedDataset {
    pub format: String,
    pub version: u32,
    pub schema: LogSchema,
    pub encoder: EncoderState,
    pub dims: DatasetDims,
    pub class_names: Vec<String>,
    pub train: Vec<EncodedGraph>,
    pub validation: Vec<EncodedGraph>,
}

impl EncodedDataset {
    /// Splits the traces, fits encoders on the training part and encodes
    /// both parts.
    pub fn build(traces: &[Trace], schema: &LogSchema, options: &SplitOptions) -> Result<Self> {
        schema.validate()?;
        let class_names: Vec<String> = traces
            .iter()
            .map(|t| t.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if class_names.len() < 2 {
            return Err(Error::contract(format!(
                "need at least 2 distinct labels, found {}",
                class_names.len()
            )));
        }
        let label_of = |t: &Trace| class_names.binary_search(&t.label).expect("label was collected");
        let prefix = options.prefix_length.or(schema.prefix_length);
        let traces: Vec<Trace> = match prefix {
            Some(k) => traces.iter().map(|t| t.prefix(k)).collect(),
            None => traces.to_vec(),
        };
        let labels: Vec<usize> = traces.iter().map(label_of).collect();
        let (train_idx, val_idx) = split_indices(&labels, options.train_fraction, options.stratified, options.seed)?;
        let train_traces: Vec<Trace> = train_idx.iter().map(|&i| traces[i].clone()).collect();
        let policy = schema.binning.clone().unwrap_or_default();
        let encoder = EncoderState::fit(&train_traces, schema, &policy)?;
        let encode = |idx: &[usize]| -> Result<Vec<EncodedGraph>> {
            idx.iter().map(|&i| encoder.encode(&traces[i], labels[i])).collect()
        };
        let train = encode(&train_idx)?;
        let validation = encode(&val_idx)?;
        let dims = DatasetDims {
            d_node: encoder.d_node(),
            d_graph: encoder.d_graph(),
            n_bins: encoder.n_bins(),
            n_activities: encoder.n_activities(),
            n_classes: class_names.len(),
        };
        Ok(Self {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            schema: schema.clone(),
            encoder,
            dims,
            class_names,
            train,
            validation,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: serde_json::Value = serde_json::from_str(text)?;
        let format = header.get("format").and_then(|v| v.as_str());
        let version = header.get("version").and_then(|v| v.as_u64());
        if format != Some(DATASET_FORMAT) {
            return Err(Error::schema(format!("not an encoded dataset (format {format:?})")));
        }
        if version != Some(u64::from(DATASET_VERSION)) {
            return Err(Error::schema(format!(
                "unsupported dataset version {version:?}, expected {DATASET_VERSION}"
            )));
        }
        Ok(serde_json::from_value(header)?)
    }
}
