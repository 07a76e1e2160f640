//! Conditional search spaces, TPE sampling, median pruning and studies.

mod pruner;
mod rank;
mod space;
mod study;
mod tpe;

pub use pruner::{median, MedianPruner};
pub use rank::{rank_models, RankingPolicy};
pub use space::{
    build_search_space, Clause, ParamKind, ParamSpec, ParamValue, Params, SearchSpace, BATCH_SIZES, MAX_DENSE_LAYERS,
    MAX_GNN_LAYERS, ORDER_RANGE,
};
pub use study::{read_ledger, run_study, trial_seed, StudyConfig, StudyOutcome, TrialLedger, TrialRecord, TrialState};
pub use tpe::{sample_uniform, suggest, Observation, TpeSettings};
