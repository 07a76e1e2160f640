use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::EncodedGraph;
use crate::model::{Batch, Model};
use crate::tensor::no_grad;
use crate::train::{argmax, compute_metrics, LossKind, MetricsReport, Optimizer, Scheduler, SchedulerConfig};

/// Graphs per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

/// Metric that drives early stopping, pruning and ranking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimaryMetric {
    Accuracy,
    WeightedF1,
}

impl PrimaryMetric {
    pub fn of(self, m: &MetricsReport) -> f64 {
        match self {
            PrimaryMetric::Accuracy => m.accuracy,
            PrimaryMetric::WeightedF1 => m.weighted_f1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimaryMetric::Accuracy => "accuracy",
            PrimaryMetric::WeightedF1 => "weighted_f1",
        }
    }
}

impl fmt::Display for PrimaryMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrimaryMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(PrimaryMetric::Accuracy),
            "weighted_f1" => Ok(PrimaryMetric::WeightedF1),
            _ => Err(Error::config(format!("unknown metric '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub max_epochs: usize,
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub metric: PrimaryMetric,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            patience: Some(30),
            metric: PrimaryMetric::Accuracy,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    Pruned,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub status: TrainStatus,
    /// Why a run failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub best_epoch: Option<usize>,
    pub best_metrics: Option<MetricsReport>,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Seconds; not serialized so that records stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Patience counter over a maximized metric. Only strict improvements
/// reset it.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: Option<usize>,
    best: f64,
    stagnant: usize,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            stagnant: 0,
        }
    }

    /// Records one epoch's value; true means stop now.
    pub fn update(&mut self, value: f64) -> bool {
        if value > self.best {
            self.best = value;
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
        }
        self.patience.is_some_and(|p| self.stagnant >= p)
    }
}

/// Metrics of `model` in eval mode over `graphs`.
pub fn evaluate(model: &Model, graphs: &[EncodedGraph], loss: LossKind) -> Result<MetricsReport> {
    if graphs.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty set"));
    }
    let was_training = model.is_training();
    model.set_training(false);
    let result = no_grad(|| {
        let mut predicted = Vec::with_capacity(graphs.len());
        let mut labels = Vec::with_capacity(graphs.len());
        let mut losses = Vec::with_capacity(graphs.len());
        for chunk in graphs.chunks(EVAL_BATCH) {
            let batch = Batch::from_graphs(&chunk.iter().collect::<Vec<_>>())?;
            let logits = model.forward(&batch)?.to_matrix();
            losses.extend(loss.per_sample(&logits, &batch.labels)?);
            predicted.extend((0..logits.rows()).map(|r| argmax(logits.row(r))));
            labels.extend_from_slice(&batch.labels);
        }
        compute_metrics(&predicted, &labels, &losses, model.config().output_size)
    });
    model.set_training(was_training);
    result
}

/// Optimizer steps a one-cycle schedule spans: the configured total, or
/// `batch_size × 1000`, capped at the steps the run can take.
pub fn one_cycle_steps(scheduler: &SchedulerConfig, batch_size: usize, max_steps: usize) -> usize {
    let nominal = match scheduler {
        SchedulerConfig::OneCycle { total_steps, .. } => total_steps.unwrap_or(batch_size * 1000),
        _ => max_steps,
    };
    nominal.min(max_steps).max(1)
}

/// Mini-batch training with per-epoch validation. `hook` sees every epoch
/// record and returns true to prune the run. The best epoch's parameters
/// are restored before returning.
pub fn train(
    model: &Model,
    train_set: &[EncodedGraph],
    val_set: &[EncodedGraph],
    settings: &TrainSettings,
    mut hook: impl FnMut(&EpochRecord) -> bool,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::contract("training needs nonempty train and validation sets"));
    }
    if settings.max_epochs == 0 {
        return Err(Error::config("max_epochs must be positive"));
    }
    let start = Instant::now();
    let cfg = model.config().clone();
    let bs = cfg.batch_size;
    let n_batches = train_set.len().div_ceil(bs);
    let total = one_cycle_steps(&cfg.scheduler, bs, settings.max_epochs * n_batches);
    let mut optimizer = Optimizer::new(model.parameters(), cfg.optimizer, cfg.l1_lambda)?;
    let mut scheduler = Scheduler::new(cfg.scheduler, cfg.optimizer.learning_rate, total)?;
    let per_batch = cfg.scheduler.per_batch();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut outcome = TrainOutcome {
        status: TrainStatus::Completed,
        failure: None,
        best_epoch: None,
        best_metrics: None,
        history: Vec::new(),
        stopped_early: false,
        wall_time: 0.0,
    };
    let mut best_state = None;
    let mut stopper = EarlyStopping::new(settings.patience);
    let fail = |outcome: &mut TrainOutcome, why: String| {
        outcome.status = TrainStatus::Failed;
        outcome.failure = Some(why);
    };

    'epochs: for epoch in 1..=settings.max_epochs {
        model.set_training(true);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let lr_at_start = scheduler.lr();
        for chunk in order.chunks(bs) {
            let graphs: Vec<&EncodedGraph> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::from_graphs(&graphs)?;
            optimizer.set_lr(scheduler.lr());
            optimizer.zero_grad();
            let loss = cfg.loss.apply(&model.forward(&batch)?, batch.labels.clone())?;
            let value = loss.item();
            if !value.is_finite() {
                fail(&mut outcome, format!("non-finite training loss at epoch {epoch}"));
                break 'epochs;
            }
            loss.backward()?;
            optimizer.step();
            if per_batch {
                scheduler.batch_end();
            }
            loss_sum += value * chunk.len() as f64;
        }
        let metrics = evaluate(model, val_set, cfg.loss)?;
        if !metrics.mean_loss.is_finite() {
            fail(&mut outcome, format!("non-finite validation loss at epoch {epoch}"));
            break;
        }
        if !per_batch {
            scheduler.epoch_end(metrics.mean_loss);
        }
        let primary = settings.metric.of(&metrics);
        let better = match &outcome.best_metrics {
            None => true,
            Some(b) => {
                let bp = settings.metric.of(b);
                primary > bp || (primary == bp && metrics.mean_loss < b.mean_loss)
            }
        };
        if better {
            outcome.best_epoch = Some(epoch);
            outcome.best_metrics = Some(metrics.clone());
            best_state = Some(model.state());
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            lr: lr_at_start,
            metrics,
        };
        let stop = stopper.update(primary);
        let prune = hook(&record);
        outcome.history.push(record);
        if prune {
            outcome.status = TrainStatus::Pruned;
            break;
        }
        if stop {
            outcome.stopped_early = true;
            break;
        }
    }
    if let Some(state) = &best_state {
        model.load_state(state)?;
    }
    model.set_training(false);
    outcome.wall_time = start.elapsed().as_secs_f64();
    Ok(outcome)
}
