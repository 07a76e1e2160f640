//! Hypermodel assembly: configuration, layers, batching and the four
//! architectures.

mod batch;
mod config;
mod dump;
mod hypermodel;
mod layers;

pub use batch::Batch;
pub use config::{Architecture, BatchNormSpec, LayerSpec, ModelConfig, Pooling};
pub use dump::{dump_config, fixed, parse_dump, sci, DumpInputs, DumpSummary, ParsedDump, DUMP_HEADER};
pub use hypermodel::{InputDims, Model, ModelState, EMBEDDING_INIT_BOUND};

use crate::error::Result;

/// Builds a model for the given input widths with seed 0.
pub fn build_model(config: &ModelConfig, dims: InputDims) -> Result<Model> {
    Model::new(config, dims, 0)
}

#[cfg(test)]
mod tests;
