//! Outcome prediction on event logs with temporally weighted graph neural
//! network hypermodels.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense 2-D tensors with reverse-mode differentiation.
//! * [`ingest`]: CSV event logs to encoded chain graphs.
//! * [`ops`]: the six message-passing operators.
//! * [`model`]: the four hypermodel architectures built from a [`model::ModelConfig`].
//! * [`train`]: losses, optimizers, schedulers, metrics and the epoch loop.
//! * [`hpo`]: conditional search space, TPE sampler, median pruner, studies.
//! * [`report`]: the architecture × operator grid runner, CSV and SVG output.

pub mod error;
pub mod hpo;
pub mod ingest;
pub mod model;
pub mod ops;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
