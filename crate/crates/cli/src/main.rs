use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hgnn_core::error::Error;
use hgnn_core::hpo::{run_study, RankingPolicy, StudyConfig};
use hgnn_core::ingest::{
    generate_synthetic_log, parse_log, BinningPolicy, EncodedDataset, LabelRule, LogSchema, SplitOptions,
    SyntheticSpec,
};
use hgnn_core::model::{Architecture, InputDims, Model};
use hgnn_core::ops::OperatorKind;
use hgnn_core::report::{
    cell_stem, per_cell_trials, ranking_table, read_grid_csv, run_grid, write_figures, write_grid_outputs,
    write_study_artifacts, load_config,
};
use hgnn_core::train::{train, TrainSettings, TrainStatus};

const EXIT_FAILURE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_TRAINING: u8 = 3;
const EXIT_EMPTY_GRID: u8 = 4;

#[derive(Parser)]
#[command(name = "hgnn", version, about = "Hierarchical GNN outcome prediction for event logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and encode an event log into a dataset cache.
    Encode(EncodeArgs),
    /// Run one hyperparameter study for an architecture and operator.
    Tune(TuneArgs),
    /// Train a saved model configuration once.
    Train(TrainArgs),
    /// Run a study for every architecture and operator pair.
    Grid(GridArgs),
    /// Redraw figures and the ranking from a grid CSV.
    Report(ReportArgs),
    /// Write a synthetic event log and its schema.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Encoded dataset cache, or a CSV log when --schema is given.
    #[arg(long, env = "HGNN_DATA")]
    data: PathBuf,
    /// Schema JSON; makes --data a raw CSV log.
    #[arg(long, env = "HGNN_SCHEMA")]
    schema: Option<PathBuf>,
    /// Binning policy JSON overriding the schema's.
    #[arg(long, env = "HGNN_BINS")]
    bins: Option<PathBuf>,
    /// Seed of the train/validation split when encoding.
    #[arg(long, env = "HGNN_SPLIT_SEED", default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long, env = "HGNN_DATA")]
    data: PathBuf,
    #[arg(long, env = "HGNN_SCHEMA")]
    schema: PathBuf,
    #[arg(long, env = "HGNN_BINS")]
    bins: Option<PathBuf>,
    #[arg(long, env = "HGNN_SPLIT_SEED", default_value_t = 0)]
    split_seed: u64,
    /// Dataset cache to write.
    #[arg(long, env = "HGNN_OUT")]
    out: PathBuf,
    /// Print the class distribution.
    #[arg(long)]
    stats: bool,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, env = "HGNN_TRIALS", default_value_t = 200)]
    trials: usize,
    #[arg(long, env = "HGNN_EPOCHS", default_value_t = 300)]
    epochs: usize,
    /// Early-stopping patience; 0 disables it.
    #[arg(long, env = "HGNN_PATIENCE", default_value_t = 30)]
    patience: usize,
    #[arg(long, env = "HGNN_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "HGNN_POLICY", default_value = "balanced")]
    policy: RankingPolicy,
    /// Trials run concurrently within a study.
    #[arg(long, env = "HGNN_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Continue the study found in the output directory.
    #[arg(long, env = "HGNN_RESUME")]
    resume: bool,
    #[arg(long, env = "HGNN_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, env = "HGNN_ARCH")]
    arch: Architecture,
    #[arg(long, env = "HGNN_OP")]
    op: OperatorKind,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    study: StudyArgs,
    /// Trials for the whole grid, split evenly over the cells.
    #[arg(long, env = "HGNN_TOTAL_BUDGET")]
    total_budget: Option<usize>,
    /// Cells run concurrently.
    #[arg(long, env = "HGNN_CELL_WORKERS", default_value_t = 1)]
    cell_workers: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model configuration JSON.
    #[arg(long, env = "HGNN_CONFIG")]
    config: PathBuf,
    #[arg(long, env = "HGNN_EPOCHS", default_value_t = 300)]
    epochs: usize,
    /// Early-stopping patience; 0 disables it.
    #[arg(long, env = "HGNN_PATIENCE", default_value_t = 0)]
    patience: usize,
    #[arg(long, env = "HGNN_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "HGNN_POLICY", default_value = "balanced")]
    policy: RankingPolicy,
    /// Metrics JSON to write.
    #[arg(long, env = "HGNN_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Grid CSV to read.
    #[arg(long, env = "HGNN_GRID")]
    grid: PathBuf,
    #[arg(long, env = "HGNN_POLICY", default_value = "balanced")]
    policy: RankingPolicy,
    /// Directory for the figures and ranking.
    #[arg(long, env = "HGNN_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    cases: usize,
    #[arg(long, default_value_t = 8)]
    activities: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    #[arg(long, default_value = "presence")]
    rule: LabelRule,
    #[arg(long, env = "HGNN_SEED", default_value_t = 0)]
    seed: u64,
    /// CSV log to write.
    #[arg(long)]
    out: PathBuf,
    /// Schema JSON to write.
    #[arg(long)]
    schema_out: PathBuf,
}

enum Failure {
    Core(Error),
    Exit(u8, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Schema(_) | Error::Row { .. } | Error::Csv(_) | Error::Json(_) => EXIT_INPUT,
        Error::Study(_) | Error::Training(_) => EXIT_TRAINING,
        _ => EXIT_FAILURE,
    }
}

type Outcome = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn encode(data: &Path, schema: &Path, bins: Option<&Path>, split_seed: u64) -> Result<EncodedDataset, Error> {
    let mut schema = LogSchema::from_json(&read_text(schema)?)?;
    if let Some(bins) = bins {
        schema.binning = Some(BinningPolicy::from_json(&read_text(bins)?)?);
    }
    let file = fs::File::open(data)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", data.display()))))?;
    let traces = parse_log(std::io::BufReader::new(file), &schema)?;
    let options = SplitOptions {
        seed: split_seed,
        ..SplitOptions::default()
    };
    EncodedDataset::build(&traces, &schema, &options)
}

fn load_data(args: &DataArgs) -> Result<EncodedDataset, Error> {
    match &args.schema {
        Some(schema) => encode(&args.data, schema, args.bins.as_deref(), args.split_seed),
        None => EncodedDataset::from_json(&read_text(&args.data)?),
    }
}

fn print_dims(data: &EncodedDataset) {
    let d = &data.dims;
    println!(
        "d_node={} d_graph={} n_bins={} n_activities={} n_classes={}",
        d.d_node, d.d_graph, d.n_bins, d.n_activities, d.n_classes
    );
    println!("train={} validation={}", data.train.len(), data.validation.len());
}

fn cmd_encode(args: EncodeArgs) -> Outcome {
    let data = encode(&args.data, &args.schema, args.bins.as_deref(), args.split_seed)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    data.save(&args.out)?;
    print_dims(&data);
    if args.stats {
        let mut counts = vec![0usize; data.class_names.len()];
        for g in data.train.iter().chain(&data.validation) {
            counts[g.label] += 1;
        }
        let total: usize = counts.iter().sum();
        for (name, n) in data.class_names.iter().zip(&counts) {
            println!("class {name}: {n} ({:.1}%)", 100.0 * *n as f64 / total as f64);
        }
    }
    Ok(())
}

fn study_config(args: &StudyArgs, arch: Architecture, op: OperatorKind) -> StudyConfig {
    let mut config = StudyConfig::new(arch, op);
    config.n_trials = args.trials;
    config.max_epochs = args.epochs;
    config.patience = (args.patience > 0).then_some(args.patience);
    config.seed = args.seed;
    config.policy = args.policy;
    config.workers = args.workers.max(1);
    config
}

fn cmd_tune(args: TuneArgs) -> Outcome {
    let data = load_data(&args.data)?;
    let config = study_config(&args.study, args.arch, args.op);
    let out = &args.study.out;
    fs::create_dir_all(out)?;
    let outcome = run_study(&config, &data, Some(&out.join("trials.jsonl")), args.study.resume)?;
    let config_path = write_study_artifacts(&outcome, &data, out, &cell_stem(args.arch, args.op))?;
    let metrics = outcome
        .retrained
        .as_ref()
        .and_then(|r| r.best_metrics.clone())
        .unwrap_or_else(|| outcome.tuned_metrics.clone());
    println!("best trial: {}", outcome.best_trial);
    println!(
        "accuracy={:.4} weighted_f1={:.4} mean_loss={:.4} loss_std={:.4}",
        metrics.accuracy, metrics.weighted_f1, metrics.mean_loss, metrics.loss_std
    );
    println!("config: {}", config_path.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Outcome {
    let data = load_data(&args.data)?;
    let config = load_config(&args.config)?;
    let model = Model::new(&config, InputDims::from(&data.dims), args.seed)?;
    let settings = TrainSettings {
        max_epochs: args.epochs,
        patience: (args.patience > 0).then_some(args.patience),
        metric: args.policy.metric(),
        seed: args.seed,
    };
    let outcome = train(&model, &data.train, &data.validation, &settings, |_| false)?;
    if outcome.status == TrainStatus::Failed {
        let reason = outcome.failure.unwrap_or_else(|| "training failed".into());
        return Err(Failure::Exit(EXIT_TRAINING, reason));
    }
    let best = outcome
        .best_metrics
        .clone()
        .ok_or_else(|| Failure::Exit(EXIT_TRAINING, "no epoch produced metrics".into()))?;
    let last = outcome.history.last().map(|e| e.metrics.clone());
    let json = serde_json::json!({
        "accuracy": best.accuracy,
        "weighted_f1": best.weighted_f1,
        "mean_loss": best.mean_loss,
        "loss_std": best.loss_std,
        "per_class_f1": best.per_class_f1,
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.history.len(),
        "final_epoch": last,
    });
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&args.out, serde_json::to_string_pretty(&json)? + "\n")?;
    println!(
        "epochs={} best_epoch={} accuracy={:.4} weighted_f1={:.4} mean_loss={:.4} loss_std={:.4}",
        outcome.history.len(),
        outcome.best_epoch.unwrap_or(0),
        best.accuracy,
        best.weighted_f1,
        best.mean_loss,
        best.loss_std
    );
    Ok(())
}

fn cmd_grid(args: GridArgs) -> Outcome {
    let data = load_data(&args.data)?;
    let mut base = study_config(&args.study, Architecture::OneLevel, OperatorKind::Gcn);
    if let Some(total) = args.total_budget {
        base.n_trials = per_cell_trials(total);
    }
    let out = &args.study.out;
    fs::create_dir_all(out)?;
    let report = run_grid(&base, &data, Some(out), args.cell_workers, args.study.resume)?;
    let rows = write_grid_outputs(&report, out)?;
    for cell in report.cells.iter().filter(|c| c.failure.is_some()) {
        eprintln!(
            "cell {} failed: {}",
            cell_stem(cell.architecture, cell.operator),
            cell.failure.as_deref().unwrap_or_default()
        );
    }
    println!("{}/{} cells completed", report.n_completed(), report.cells.len());
    if report.n_completed() == 0 {
        return Err(Failure::Exit(EXIT_EMPTY_GRID, "no grid cell completed".into()));
    }
    let table = ranking_table(&rows, base.policy);
    fs::write(out.join("ranking.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Outcome {
    let rows = read_grid_csv(&args.grid)?;
    fs::create_dir_all(&args.out)?;
    let written = write_figures(&rows, args.policy.metric(), &args.out.join("figures"))?;
    let table = ranking_table(&rows, args.policy);
    fs::write(args.out.join("ranking.txt"), &table)?;
    print!("{table}");
    for path in written {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Outcome {
    let spec = SyntheticSpec {
        n_cases: args.cases,
        n_activities: args.activities,
        n_classes: args.classes,
        imbalance_ratio: args.ratio,
        rule: args.rule,
        seed: args.seed,
    };
    let log = generate_synthetic_log(&spec)?;
    fs::write(&args.out, &log.csv)?;
    fs::write(&args.schema_out, serde_json::to_string_pretty(&log.schema)? + "\n")?;
    let mut counts = std::collections::BTreeMap::new();
    for t in &log.traces {
        *counts.entry(t.label.as_str()).or_insert(0usize) += 1;
    }
    println!("class sizes: {counts:?}");
    println!("{} cases written to {}", log.traces.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Train(a) => cmd_train(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Report(a) => cmd_report(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Exit(code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
