use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::thread;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpo::pruner::MedianPruner;
use crate::hpo::rank::RankingPolicy;
use crate::hpo::space::{build_search_space, Params, SearchSpace};
use crate::hpo::tpe::{suggest, Observation, TpeSettings};
use crate::ingest::EncodedDataset;
use crate::model::{Architecture, InputDims, Model, ModelConfig};
use crate::ops::OperatorKind;
use crate::train::{train, MetricsReport, TrainOutcome, TrainSettings, TrainStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub architecture: Architecture,
    pub operator: OperatorKind,
    pub n_trials: usize,
    pub max_epochs: usize,
    /// `None` disables early stopping inside trials.
    pub patience: Option<usize>,
    pub policy: RankingPolicy,
    pub seed: u64,
    pub tpe: TpeSettings,
    /// `None` disables pruning.
    pub pruner: Option<MedianPruner>,
    /// Trials run concurrently per wave; 1 is fully sequential.
    pub workers: usize,
    /// Retrain the winner for `max_epochs` without early stopping.
    pub retrain: bool,
}

impl StudyConfig {
    pub fn new(architecture: Architecture, operator: OperatorKind) -> Self {
        Self {
            architecture,
            operator,
            n_trials: 200,
            max_epochs: 300,
            patience: Some(30),
            policy: RankingPolicy::Balanced,
            seed: 0,
            tpe: TpeSettings::default(),
            pruner: Some(MedianPruner::default()),
            workers: 1,
            retrain: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialState {
    Running,
    Complete,
    Pruned,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub state: TrialState,
    pub params: Params,
    /// `(epoch, primary metric)` after each epoch.
    pub intermediate: Vec<(usize, f64)>,
    pub best_epoch: Option<usize>,
    /// Validation metrics at the best epoch; present for every completed
    /// trial.
    #[serde(rename = "final")]
    pub final_metrics: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl TrialRecord {
    fn objective(&self, policy: RankingPolicy) -> Option<f64> {
        match self.state {
            TrialState::Complete => self.final_metrics.as_ref().map(|m| policy.metric().of(m)),
            _ => None,
        }
    }
}

pub struct StudyOutcome {
    pub trials: Vec<TrialRecord>,
    pub best_trial: usize,
    pub best_config: ModelConfig,
    pub tuned_metrics: MetricsReport,
    pub retrained: Option<TrainOutcome>,
    /// The retrained winner, in eval mode.
    pub model: Option<Model>,
}

/// Seed of the model, dropout and shuffling of trial `index`.
pub fn trial_seed(study_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(study_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

fn suggestion_rng(study_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(study_seed);
    rng.set_stream((1 << 32) + index as u64);
    rng
}

/// Append-only JSON-lines store of finished trials.
pub struct TrialLedger {
    file: File,
}

impl TrialLedger {
    /// Opens `path`, keeping existing records when `resume` is set and
    /// truncating otherwise. Returns the kept records.
    pub fn open(path: &Path, resume: bool) -> Result<(Self, Vec<TrialRecord>)> {
        let records = if resume && path.exists() { read_ledger(path)? } else { Vec::new() };
        let file = if resume {
            OpenOptions::new().create(true).append(true).open(path)?
        } else {
            File::create(path)?
        };
        Ok((Self { file }, records))
    }

    pub fn append(&mut self, record: &TrialRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_ledger(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord = serde_json::from_str(&line).map_err(|e| Error::Row {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn check_resumed(records: &[TrialRecord], space: &SearchSpace, config: &StudyConfig) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        if r.index != i || r.state == TrialState::Running {
            return Err(Error::Study(format!("ledger record {i} (index {}) is out of order or unfinished", r.index)));
        }
        if r.seed != trial_seed(config.seed, i) {
            return Err(Error::Study(format!("ledger record {i} was produced with another seed")));
        }
        space
            .validate_params(&r.params)
            .map_err(|e| Error::Study(format!("ledger record {i} does not fit this search space: {e}")))?;
    }
    Ok(())
}

/// Tunes one architecture and operator pair on the dataset's training and
/// validation split.
///
/// With one worker the study is deterministic given its seed. With more,
/// trials run in waves that all see the history as of the wave's start.
pub fn run_study(config: &StudyConfig, data: &EncodedDataset, ledger: Option<&Path>, resume: bool) -> Result<StudyOutcome> {
    if config.n_trials == 0 {
        return Err(Error::config("a study needs at least one trial"));
    }
    let space = build_search_space(config.architecture, config.operator);
    space.check()?;
    let (mut store, mut trials) = match ledger {
        Some(path) => {
            let (store, records) = TrialLedger::open(path, resume)?;
            (Some(store), records)
        }
        None => (None, Vec::new()),
    };
    check_resumed(&trials, &space, config)?;
    trials.truncate(config.n_trials);

    let workers = config.workers.max(1);
    while trials.len() < config.n_trials {
        let start = trials.len();
        let wave = workers.min(config.n_trials - start);
        let history = &trials;
        let results: Vec<TrialRecord> = if wave == 1 {
            vec![run_trial(config, &space, data, history, start)]
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = (start..start + wave)
                    .map(|index| {
                        let space = &space;
                        s.spawn(move || run_trial(config, space, data, history, index))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().map_err(|_| Error::Study("trial worker panicked".into())))
                    .collect::<Result<Vec<_>>>()
            })?
        };
        for record in results {
            log::info!(
                "trial {} {:?} {}",
                record.index,
                record.state,
                record.objective(config.policy).map_or("-".to_string(), |v| format!("{v:.4}"))
            );
            if let Some(store) = store.as_mut() {
                store.append(&record)?;
            }
            trials.push(record);
        }
    }
    finish(config, &space, data, trials)
}

fn finish(config: &StudyConfig, space: &SearchSpace, data: &EncodedDataset, trials: Vec<TrialRecord>) -> Result<StudyOutcome> {
    let best = trials
        .iter()
        .filter(|t| t.state == TrialState::Complete)
        .min_by(|a, b| {
            let (ma, mb) = (a.final_metrics.as_ref().unwrap(), b.final_metrics.as_ref().unwrap());
            config.policy.compare(ma, mb).then(a.index.cmp(&b.index))
        });
    let Some(best) = best else {
        let reasons: Vec<String> = trials
            .iter()
            .filter_map(|t| t.failure.as_ref().map(|f| format!("trial {}: {f}", t.index)))
            .take(5)
            .collect();
        return Err(Error::Study(format!(
            "none of {} trials completed{}{}",
            trials.len(),
            if reasons.is_empty() { "" } else { "; " },
            reasons.join("; ")
        )));
    };
    let best_config = space.to_config(&best.params, data.dims.n_classes)?;
    let tuned_metrics = best.final_metrics.clone().unwrap();
    let (best_trial, seed) = (best.index, best.seed);
    let (retrained, model) = if config.retrain {
        let model = Model::new(&best_config, InputDims::from(&data.dims), seed)?;
        let settings = TrainSettings {
            max_epochs: config.max_epochs,
            patience: None,
            metric: config.policy.metric(),
            seed,
        };
        let outcome = train(&model, &data.train, &data.validation, &settings, |_| false)?;
        (Some(outcome), Some(model))
    } else {
        (None, None)
    };
    Ok(StudyOutcome {
        trials,
        best_trial,
        best_config,
        tuned_metrics,
        retrained,
        model,
    })
}

fn run_trial(config: &StudyConfig, space: &SearchSpace, data: &EncodedDataset, history: &[TrialRecord], index: usize) -> TrialRecord {
    let observations: Vec<Observation> = history
        .iter()
        .filter_map(|t| {
            t.objective(config.policy).map(|value| Observation {
                params: &t.params,
                value,
            })
        })
        .collect();
    let params = suggest(space, &observations, &config.tpe, &mut suggestion_rng(config.seed, index));
    let seed = trial_seed(config.seed, index);
    let mut record = TrialRecord {
        index,
        seed,
        state: TrialState::Running,
        params,
        intermediate: Vec::new(),
        best_epoch: None,
        final_metrics: None,
        failure: None,
    };
    match execute(config, space, data, history, &record.params, seed) {
        Ok(outcome) => {
            record.intermediate = outcome
                .history
                .iter()
                .map(|r| (r.epoch, config.policy.metric().of(&r.metrics)))
                .collect();
            record.best_epoch = outcome.best_epoch;
            record.final_metrics = outcome.best_metrics;
            record.state = match outcome.status {
                TrainStatus::Completed if record.final_metrics.is_some() => TrialState::Complete,
                TrainStatus::Pruned => TrialState::Pruned,
                _ => TrialState::Failed,
            };
            record.failure = outcome.failure;
        }
        Err(e) => {
            record.state = TrialState::Failed;
            record.failure = Some(e.to_string());
        }
    }
    if record.state == TrialState::Failed {
        record.final_metrics = None;
    }
    record
}

fn execute(
    config: &StudyConfig,
    space: &SearchSpace,
    data: &EncodedDataset,
    history: &[TrialRecord],
    params: &Params,
    seed: u64,
) -> Result<TrainOutcome> {
    let model_config = space.to_config(params, data.dims.n_classes)?;
    let model = Model::new(&model_config, InputDims::from(&data.dims), seed)?;
    let settings = TrainSettings {
        max_epochs: config.max_epochs,
        patience: config.patience,
        metric: config.policy.metric(),
        seed,
    };
    let peers = |epoch: usize| -> Vec<f64> {
        history
            .iter()
            .filter(|t| matches!(t.state, TrialState::Complete | TrialState::Pruned))
            .filter_map(|t| t.intermediate.iter().find(|(e, _)| *e == epoch).map(|(_, v)| *v))
            .collect()
    };
    train(&model, &data.train, &data.validation, &settings, |record| {
        config
            .pruner
            .is_some_and(|p| p.should_prune(record.epoch, settings.metric.of(&record.metrics), &peers(record.epoch)))
    })
}
