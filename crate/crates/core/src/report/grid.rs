use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpo::{run_study, RankingPolicy, StudyConfig, StudyOutcome};
use crate::ingest::EncodedDataset;
use crate::model::{dump_config, Architecture, DumpSummary, InputDims, ModelConfig};
use crate::ops::OperatorKind;
use crate::train::MetricsReport;

/// Result of one architecture and operator study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub architecture: Architecture,
    pub operator: OperatorKind,
    /// Retrained winner metrics, or the tuned trial's when retraining is off.
    pub metrics: Option<MetricsReport>,
    /// Winning configuration file, relative to the grid's output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub policy: RankingPolicy,
    /// Architecture-major, in `Architecture::ALL` × `OperatorKind::ALL` order.
    pub cells: Vec<GridCell>,
}

impl GridReport {
    pub fn cell(&self, architecture: Architecture, operator: OperatorKind) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.architecture == architecture && c.operator == operator)
    }

    pub fn n_completed(&self) -> usize {
        self.cells.iter().filter(|c| c.metrics.is_some()).count()
    }
}

/// Every architecture and operator pair in grid order.
pub fn grid_pairs() -> Vec<(Architecture, OperatorKind)> {
    Architecture::ALL
        .iter()
        .flat_map(|&a| OperatorKind::ALL.iter().map(move |&o| (a, o)))
        .collect()
}

/// File stem used for a cell's artifacts.
pub fn cell_stem(architecture: Architecture, operator: OperatorKind) -> String {
    format!("{}_{}", architecture.short(), operator.name())
}

/// Trials per cell when a total budget is split across the grid.
pub fn per_cell_trials(total_budget: usize) -> usize {
    (total_budget / grid_pairs().len()).max(1)
}

/// Writes a study's ledger-independent artifacts: winner config JSON, the
/// text dump and metrics JSON. Returns the config path.
pub fn write_study_artifacts(out: &StudyOutcome, data: &EncodedDataset, dir: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let config_path = dir.join(format!("{stem}_config.json"));
    fs::write(&config_path, out.best_config.to_json()?)?;
    let (metrics, best_epoch) = match &out.retrained {
        Some(r) => (r.best_metrics.clone().unwrap_or_else(|| out.tuned_metrics.clone()), r.best_epoch),
        None => (out.tuned_metrics.clone(), out.trials[out.best_trial].best_epoch),
    };
    let summary = DumpSummary {
        best_epoch: best_epoch.unwrap_or(0),
        accuracy: metrics.accuracy,
        weighted_f1: Some(metrics.weighted_f1),
        loss: metrics.mean_loss,
        loss_std: metrics.loss_std,
    };
    fs::write(dir.join(format!("{stem}_dump.txt")), dump_config(&out.best_config, &InputDims::from(&data.dims), Some(&summary)))?;
    let metrics_json = serde_json::json!({
        "best_trial": out.best_trial,
        "tuned": out.tuned_metrics,
        "retrained": out.retrained.as_ref().and_then(|r| r.best_metrics.clone()),
        "retrained_best_epoch": out.retrained.as_ref().and_then(|r| r.best_epoch),
        "retrained_final_epoch": out.retrained.as_ref().and_then(|r| r.history.last().map(|e| e.metrics.clone())),
    });
    fs::write(dir.join(format!("{stem}_metrics.json")), serde_json::to_string_pretty(&metrics_json)? + "\n")?;
    Ok(config_path)
}

fn run_cell(base: &StudyConfig, data: &EncodedDataset, out_dir: Option<&Path>, arch: Architecture, op: OperatorKind, resume: bool) -> GridCell {
    let mut config = base.clone();
    config.architecture = arch;
    config.operator = op;
    let stem = cell_stem(arch, op);
    let run = || -> Result<(MetricsReport, Option<PathBuf>)> {
        let ledger = out_dir.map(|d| d.join("trials").join(format!("{stem}.jsonl")));
        if let Some(path) = &ledger {
            fs::create_dir_all(path.parent().unwrap())?;
        }
        let out = run_study(&config, data, ledger.as_deref(), resume)?;
        let metrics = out
            .retrained
            .as_ref()
            .and_then(|r| r.best_metrics.clone())
            .unwrap_or_else(|| out.tuned_metrics.clone());
        let path = match out_dir {
            Some(d) => {
                write_study_artifacts(&out, data, &d.join("cells"), &stem)?;
                Some(Path::new("cells").join(format!("{stem}_config.json")))
            }
            None => None,
        };
        Ok((metrics, path))
    };
    match run() {
        Ok((metrics, config_path)) => GridCell {
            architecture: arch,
            operator: op,
            metrics: Some(metrics),
            config_path,
            failure: None,
        },
        Err(e) => {
            log::warn!("cell {stem} failed: {e}");
            GridCell {
                architecture: arch,
                operator: op,
                metrics: None,
                config_path: None,
                failure: Some(e.to_string()),
            }
        }
    }
}

/// Runs one study per architecture and operator pair. `cell_workers`
/// cells run at a time; each cell's study uses `base.workers`.
pub fn run_grid(
    base: &StudyConfig,
    data: &EncodedDataset,
    out_dir: Option<&Path>,
    cell_workers: usize,
    resume: bool,
) -> Result<GridReport> {
    let pairs = grid_pairs();
    let mut cells = Vec::with_capacity(pairs.len());
    for wave in pairs.chunks(cell_workers.max(1)) {
        if wave.len() == 1 {
            cells.push(run_cell(base, data, out_dir, wave[0].0, wave[0].1, resume));
            continue;
        }
        let done = thread::scope(|s| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&(a, o)| s.spawn(move || run_cell(base, data, out_dir, a, o, resume)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().map_err(|_| Error::Study("grid worker panicked".into())))
                .collect::<Result<Vec<_>>>()
        })?;
        cells.extend(done);
    }
    Ok(GridReport {
        policy: base.policy,
        cells,
    })
}

/// Loads a cell's winning configuration.
pub fn load_config(path: &Path) -> Result<ModelConfig> {
    ModelConfig::from_json(&fs::read_to_string(path)?)
}
