//! Human-readable hyperparameter listing and its parser.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::{Architecture, BatchNormSpec, LayerSpec, ModelConfig, Pooling};
use crate::model::hypermodel::InputDims;
use crate::ops::{Aggregation, OperatorKind};
use crate::tensor::ActivationKind;
use crate::train::{LossKind, OptimizerConfig, OptimizerKind, SchedulerConfig};

pub const DUMP_HEADER: &str = "Best hyperparameters found were:";

/// Best-epoch figures appended to a listing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpSummary {
    pub best_epoch: usize,
    pub accuracy: f64,
    pub weighted_f1: Option<f64>,
    pub loss: f64,
    pub loss_std: f64,
}

/// Input widths printed in a listing; absent lines stay `None`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DumpInputs {
    pub event: Option<usize>,
    pub sequence: Option<usize>,
    pub duration: Option<usize>,
    pub activity: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedDump {
    pub config: ModelConfig,
    pub inputs: DumpInputs,
    pub summary: Option<DumpSummary>,
}

/// Four-digit mantissa with a signed two-digit exponent, e.g. `6.3114e-03`.
pub fn sci(x: f64) -> String {
    let s = format!("{x:.4e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let e: i32 = exp.parse().expect("integer exponent");
    let sign = if e < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", e.abs())
}

pub fn fixed(x: f64) -> String {
    format!("{x:.4}")
}

fn scheduler_label(s: &SchedulerConfig) -> &'static str {
    match s {
        SchedulerConfig::Constant => "None",
        SchedulerConfig::Step { .. } => "StepLR",
        SchedulerConfig::Exponential { .. } => "ExponentialLR",
        SchedulerConfig::ReduceOnPlateau { .. } => "ReduceLROnPlateau",
        SchedulerConfig::Polynomial { .. } => "PolynomialLR",
        SchedulerConfig::CosineAnnealing { .. } => "CosineAnnealingLR",
        SchedulerConfig::Cyclic { .. } => "CyclicLR",
        SchedulerConfig::OneCycle { .. } => "OneCycleLR",
    }
}

fn loss_label(l: LossKind) -> &'static str {
    match l {
        LossKind::CrossEntropy => "CrossEntropyLoss()",
        LossKind::MultiMargin => "MultiMarginLoss()",
    }
}

fn write_stack(out: &mut String, title: &str, layers: &[LayerSpec]) {
    let _ = writeln!(out, " Number of {title} layers: {}", layers.len());
    write_layers(out, title, layers);
}

fn write_layers(out: &mut String, title: &str, layers: &[LayerSpec]) {
    for (i, l) in layers.iter().enumerate() {
        let _ = writeln!(out, "   {title} Layer {}:", i + 1);
        let _ = writeln!(out, "    Units: {}", l.units);
        if l.skip {
            let _ = writeln!(out, "    Skip Connections: True");
        }
        if let Some(bn) = l.batch_norm {
            let _ = writeln!(out, "    Batch Norm Momentum: {}", fixed(bn.momentum));
            let _ = writeln!(out, "    Batch Norm Epsilon: {}", sci(bn.eps));
        }
        let _ = writeln!(out, "    Activation: {}", l.activation.name());
        if let Some(p) = l.dropout {
            let _ = writeln!(out, "    Dropout: {}", fixed(p));
        }
    }
}

/// Renders a configuration as an indented listing headed by
/// [`DUMP_HEADER`], optionally followed by best-epoch figures.
pub fn dump_config(config: &ModelConfig, dims: &InputDims, summary: Option<&DumpSummary>) -> String {
    let op = config.operator.label();
    let arch = config.architecture;
    let mut out = String::new();
    let _ = writeln!(out, "{DUMP_HEADER}");
    let event_in = match arch {
        Architecture::OneLevel => dims.d_node + dims.d_graph,
        Architecture::TwoLevelEmbedding if !config.keep_activity_onehot => dims.d_node - dims.n_activities,
        _ => dims.d_node,
    };
    let _ = writeln!(out, "Event Input Size: {event_in}");
    write_stack(&mut out, op, &config.gnn_layers);
    let _ = writeln!(out, " ");
    if arch == Architecture::TwoLevelPseudo {
        let _ = writeln!(out, "Duration Embedding Input Size: {}", dims.n_bins);
        write_stack(&mut out, &format!("Duration Embedding {op}"), &config.pseudo_gnn_layers);
        let _ = writeln!(out, " ");
        let title = format!("Concatenated {op}");
        let _ = writeln!(out, "Number of {title} layers: {}", config.concat_gnn_layers.len());
        write_layers(&mut out, &title, &config.concat_gnn_layers);
        let _ = writeln!(out, " ");
    }
    if arch == Architecture::TwoLevelEmbedding {
        let _ = writeln!(out, "Activity Embedding Input Size: {}", dims.n_activities);
        let _ = writeln!(out, " Embedding Dim: {}", config.embedding_dim.unwrap_or(0));
        if !config.keep_activity_onehot {
            let _ = writeln!(out, " Keep Activity One-Hot: False");
        }
        write_stack(&mut out, &format!("Activity Embedding {op}"), &config.embedding_gnn_layers);
        let _ = writeln!(out, " ");
    }
    let _ = writeln!(out, "Pooling Method: {}", config.pooling.name());
    if let Some(a) = config.graph_aggregation {
        let _ = writeln!(out, "Graph Aggregation: {}", a.name());
    }
    if let Some(k) = config.order {
        let _ = writeln!(out, "Filter Order (K): {k}");
    }
    let _ = writeln!(out);
    if arch.is_two_level() {
        let _ = writeln!(out, "Sequence Input Size: {}", dims.d_graph);
        write_stack(&mut out, "Sequence Dense", &config.sequence_dense_layers);
        let _ = writeln!(out, "  ");
    }
    let _ = writeln!(out, "Number of Dense layers: {}", config.final_dense_layers.len());
    write_layers(&mut out, "Dense", &config.final_dense_layers);
    let _ = writeln!(out, " ");
    let _ = writeln!(out, "Output Size: {}", config.output_size);
    let _ = writeln!(out, "Batch Size: {}", config.batch_size);
    let _ = writeln!(out);

    let opt = &config.optimizer;
    let o = opt.kind.label();
    let _ = writeln!(out, "Optimizer: {o}");
    let _ = writeln!(out, "  Learning Rate ({o}): {}", sci(opt.learning_rate));
    let _ = writeln!(out, "  Weight Decay ({o}): {}", sci(opt.weight_decay));
    match opt.kind {
        OptimizerKind::Adam { beta1, beta2 } => {
            let _ = writeln!(out, "  Beta1 ({o}): {}", fixed(beta1));
            let _ = writeln!(out, "  Beta2 ({o}): {}", fixed(beta2));
        }
        OptimizerKind::Sgd { momentum } => {
            let _ = writeln!(out, "  Momentum ({o}): {}", fixed(momentum));
        }
        OptimizerKind::Rmsprop { alpha, momentum, eps } => {
            let _ = writeln!(out, "  Momentum ({o}): {}", fixed(momentum));
            let _ = writeln!(out, "  Alpha ({o}): {}", fixed(alpha));
            let _ = writeln!(out, "  Eps ({o}): {}", sci(eps));
        }
    }
    let _ = writeln!(out, "  ");
    let _ = writeln!(out, "Learning Rate Schedule: {}", scheduler_label(&config.scheduler));
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "  {k}: {v}");
    };
    match config.scheduler {
        SchedulerConfig::Constant => {}
        SchedulerConfig::Step { step_size, gamma } => {
            kv("Step_size", step_size.to_string());
            kv("Gamma", fixed(gamma));
        }
        SchedulerConfig::Exponential { gamma } => kv("Gamma", fixed(gamma)),
        SchedulerConfig::ReduceOnPlateau { factor, patience, threshold, eps } => {
            kv("Factor", fixed(factor));
            kv("Patience", patience.to_string());
            kv("Threshold", sci(threshold));
            kv("Eps", sci(eps));
        }
        SchedulerConfig::Polynomial { power, total_iters } => {
            kv("Power", fixed(power));
            kv("Total_iters", total_iters.to_string());
        }
        SchedulerConfig::CosineAnnealing { t_max, eta_min } => {
            kv("T_max", t_max.to_string());
            kv("Eta_min", sci(eta_min));
        }
        SchedulerConfig::Cyclic { base_lr, max_lr, step_size_up } => {
            kv("Base_lr", sci(base_lr));
            kv("Max_lr", sci(max_lr));
            kv("Step_size_up", step_size_up.to_string());
        }
        SchedulerConfig::OneCycle { max_lr, pct_start, total_steps } => {
            kv("Max_lr", sci(max_lr));
            kv(
                "Total_steps",
                total_steps.unwrap_or(config.batch_size * 1000).to_string(),
            );
            kv("Pct_start", fixed(pct_start));
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Loss function: {}", loss_label(config.loss));
    let _ = writeln!(out, "l1 lambda: {}", sci(config.l1_lambda));
    if let Some(s) = summary {
        let _ = writeln!(out);
        let _ = writeln!(out, "Best batch size: {}", config.batch_size);
        let _ = writeln!(out, "Best epoch: {}", s.best_epoch);
        let _ = writeln!(out, "Best accuracy: {}", fixed(s.accuracy));
        if let Some(f1) = s.weighted_f1 {
            let _ = writeln!(out, "Best weighted F1: {}", fixed(f1));
        }
        let _ = writeln!(out, "Best loss: {}", fixed(s.loss));
        let _ = writeln!(out, "Best loss std: {}", fixed(s.loss_std));
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Stack {
    Main,
    Pseudo,
    Concat,
    Embedding,
    Sequence,
    Dense,
}

#[derive(Default)]
struct PartialLayer {
    units: Option<usize>,
    activation: Option<ActivationKind>,
    dropout: Option<f64>,
    bn_momentum: Option<f64>,
    bn_eps: Option<f64>,
    skip: bool,
}

impl PartialLayer {
    fn finish(self, line: usize) -> Result<LayerSpec> {
        let missing = |what: &str| Error::config(format!("listing line {line}: layer without {what}"));
        let batch_norm = match (self.bn_momentum, self.bn_eps) {
            (Some(momentum), Some(eps)) => Some(BatchNormSpec { momentum, eps }),
            (None, None) => None,
            _ => return Err(missing("both batch-norm momentum and epsilon")),
        };
        Ok(LayerSpec {
            units: self.units.ok_or_else(|| missing("units"))?,
            activation: self.activation.ok_or_else(|| missing("an activation"))?,
            dropout: self.dropout,
            batch_norm,
            skip: self.skip,
        })
    }
}

struct Parser {
    stacks: [Vec<LayerSpec>; 6],
    current: Option<(Stack, PartialLayer, usize)>,
    operator: Option<OperatorKind>,
}

impl Parser {
    fn flush(&mut self) -> Result<()> {
        if let Some((stack, layer, line)) = self.current.take() {
            self.stacks[stack as usize].push(layer.finish(line)?);
        }
        Ok(())
    }

    fn layer(&mut self, line: usize) -> Result<&mut PartialLayer> {
        match &mut self.current {
            Some((_, l, _)) => Ok(l),
            None => Err(Error::config(format!("listing line {line}: layer field outside a layer"))),
        }
    }

    /// Classifies a stack title such as `Duration Embedding GCN` and notes
    /// the operator it names.
    fn stack_of(&mut self, title: &str, line: usize) -> Result<Stack> {
        let bad = || Error::config(format!("listing line {line}: unknown layer group '{title}'"));
        if title == "Sequence Dense" {
            return Ok(Stack::Sequence);
        }
        if title == "Dense" {
            return Ok(Stack::Dense);
        }
        let (stack, op) = if let Some(rest) = title.strip_prefix("Duration Embedding ") {
            (Stack::Pseudo, rest)
        } else if let Some(rest) = title.strip_prefix("Activity Embedding ") {
            (Stack::Embedding, rest)
        } else if let Some(rest) = title.strip_prefix("Concatenated ") {
            (Stack::Concat, rest)
        } else {
            (Stack::Main, title)
        };
        let kind: OperatorKind = op.parse().map_err(|_| bad())?;
        match self.operator {
            Some(k) if k != kind => Err(Error::config(format!(
                "listing line {line}: layer groups name both {} and {}",
                k.label(),
                kind.label()
            ))),
            _ => {
                self.operator = Some(kind);
                Ok(stack)
            }
        }
    }
}

fn num<T: std::str::FromStr>(value: &str, key: &str, line: usize) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("listing line {line}: bad value '{value}' for {key}")))
}

/// Reads a listing produced by [`dump_config`]. Lines may appear in any
/// order outside layer blocks; best-epoch figures before or after the
/// header are accepted.
pub fn parse_dump(text: &str) -> Result<ParsedDump> {
    let mut p = Parser {
        stacks: Default::default(),
        current: None,
        operator: None,
    };
    let mut inputs = DumpInputs::default();
    let mut pooling = None;
    let mut aggregation = None;
    let mut order = None;
    let mut embedding_dim = None;
    let mut keep_onehot = true;
    let mut output_size = None;
    let mut batch_size = None;
    let mut opt_kind: Option<String> = None;
    let mut opt = std::collections::BTreeMap::<String, f64>::new();
    let mut sched_kind: Option<String> = None;
    let mut sched = std::collections::BTreeMap::<String, f64>::new();
    let mut loss = None;
    let mut l1 = 0.0;
    let (mut epoch, mut acc, mut f1, mut best_loss, mut std) = (None, None, None, None, None);
    let mut in_scheduler = false;

    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line == DUMP_HEADER {
            continue;
        }
        if let Some(title) = line.strip_suffix(':') {
            let (title, _) = title
                .rsplit_once(" Layer ")
                .ok_or_else(|| Error::config(format!("listing line {n}: unexpected '{line}'")))?;
            p.flush()?;
            let stack = p.stack_of(title, n)?;
            p.current = Some((stack, PartialLayer::default(), n));
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::config(format!("listing line {n}: expected 'key: value', got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if let Some(title) = key.strip_prefix("Number of ").and_then(|k| k.strip_suffix(" layers")) {
            p.flush()?;
            p.stack_of(title, n)?;
            continue;
        }
        match key {
            "Units" => p.layer(n)?.units = Some(num(value, key, n)?),
            "Activation" => {
                p.layer(n)?.activation = Some(
                    value
                        .parse()
                        .map_err(|e: String| Error::config(format!("listing line {n}: {e}")))?,
                )
            }
            "Dropout" => p.layer(n)?.dropout = Some(num(value, key, n)?),
            "Batch Norm Momentum" => p.layer(n)?.bn_momentum = Some(num(value, key, n)?),
            "Batch Norm Epsilon" => p.layer(n)?.bn_eps = Some(num(value, key, n)?),
            "Skip Connections" => p.layer(n)?.skip = value.eq_ignore_ascii_case("true"),
            _ => {
                p.flush()?;
                if in_scheduler {
                    if let Ok(v) = value.parse::<f64>() {
                        if matches!(
                            key,
                            "Step_size" | "Gamma" | "Factor" | "Patience" | "Threshold" | "Eps" | "Power"
                                | "Total_iters" | "T_max" | "Eta_min" | "Base_lr" | "Max_lr" | "Step_size_up"
                                | "Total_steps" | "Pct_start"
                        ) {
                            sched.insert(key.to_string(), v);
                            continue;
                        }
                    }
                }
                in_scheduler = false;
                if key == "Filter Order (K)" {
                    order = Some(num(value, key, n)?);
                    continue;
                }
                if let Some((field, family)) = key.strip_suffix(')').and_then(|k| k.split_once(" (")) {
                    if opt_kind.as_deref() != Some(family) {
                        return Err(Error::config(format!("listing line {n}: '{key}' does not match the optimizer")));
                    }
                    opt.insert(field.to_string(), num(value, key, n)?);
                    continue;
                }
                match key {
                    "Event Input Size" => inputs.event = Some(num(value, key, n)?),
                    "Sequence Input Size" => inputs.sequence = Some(num(value, key, n)?),
                    "Duration Embedding Input Size" => inputs.duration = Some(num(value, key, n)?),
                    "Activity Embedding Input Size" => inputs.activity = Some(num(value, key, n)?),
                    "Embedding Dim" => embedding_dim = Some(num(value, key, n)?),
                    "Keep Activity One-Hot" => keep_onehot = value.eq_ignore_ascii_case("true"),
                    "Pooling Method" => pooling = Some(value.parse::<Pooling>()?),
                    "Graph Aggregation" => aggregation = Some(value.parse::<Aggregation>()?),
                    "Output Size" => output_size = Some(num(value, key, n)?),
                    "Batch Size" | "Best batch size" => batch_size = Some(num(value, key, n)?),
                    "Optimizer" => opt_kind = Some(value.to_string()),
                    "Learning Rate Schedule" => {
                        sched_kind = Some(value.to_string());
                        in_scheduler = true;
                    }
                    "Loss function" => {
                        loss = Some(match value {
                            "CrossEntropyLoss()" => LossKind::CrossEntropy,
                            "MultiMarginLoss()" => LossKind::MultiMargin,
                            other => return Err(Error::config(format!("listing line {n}: unknown loss '{other}'"))),
                        })
                    }
                    "l1 lambda" => l1 = num(value, key, n)?,
                    "Best epoch" => epoch = Some(num(value, key, n)?),
                    "Best accuracy" => acc = Some(num(value, key, n)?),
                    "Best weighted F1" => f1 = Some(num(value, key, n)?),
                    "Best loss" => best_loss = Some(num(value, key, n)?),
                    "Best loss std" => std = Some(num(value, key, n)?),
                    _ => return Err(Error::config(format!("listing line {n}: unknown key '{key}'"))),
                }
            }
        }
    }
    p.flush()?;

    let need = |what: &str| Error::config(format!("listing has no {what}"));
    let operator = p.operator.ok_or_else(|| need("GNN layers"))?;
    let [gnn, pseudo, concat, embedding, sequence, dense] = p.stacks;
    let architecture = if !pseudo.is_empty() || !concat.is_empty() {
        Architecture::TwoLevelPseudo
    } else if !embedding.is_empty() || embedding_dim.is_some() {
        Architecture::TwoLevelEmbedding
    } else if !sequence.is_empty() {
        Architecture::TwoLevel
    } else {
        Architecture::OneLevel
    };
    let opt_field = |k: &str| opt.get(k).copied().ok_or_else(|| need(&format!("optimizer field '{k}'")));
    let opt_name = opt_kind.ok_or_else(|| need("optimizer"))?;
    let kind = match opt_name.as_str() {
        "Adam" => OptimizerKind::Adam {
            beta1: opt_field("Beta1")?,
            beta2: opt_field("Beta2")?,
        },
        "SGD" => OptimizerKind::Sgd {
            momentum: opt_field("Momentum")?,
        },
        "RMSprop" => OptimizerKind::Rmsprop {
            alpha: opt_field("Alpha")?,
            momentum: opt_field("Momentum")?,
            eps: opt_field("Eps")?,
        },
        other => return Err(Error::config(format!("unknown optimizer '{other}'"))),
    };
    let optimizer = OptimizerConfig {
        learning_rate: opt_field("Learning Rate")?,
        weight_decay: opt.get("Weight Decay").copied().unwrap_or(0.0),
        kind,
    };
    let batch_size: usize = batch_size.ok_or_else(|| need("batch size"))?;
    let s = |k: &str| sched.get(k).copied().ok_or_else(|| need(&format!("scheduler field '{k}'")));
    let scheduler = match sched_kind.as_deref().unwrap_or("None") {
        "None" => SchedulerConfig::Constant,
        "StepLR" => SchedulerConfig::Step {
            step_size: s("Step_size")? as usize,
            gamma: s("Gamma")?,
        },
        "ExponentialLR" => SchedulerConfig::Exponential { gamma: s("Gamma")? },
        "ReduceLROnPlateau" => SchedulerConfig::ReduceOnPlateau {
            factor: s("Factor")?,
            patience: s("Patience")? as usize,
            threshold: s("Threshold")?,
            eps: s("Eps")?,
        },
        "PolynomialLR" => SchedulerConfig::Polynomial {
            power: s("Power")?,
            total_iters: s("Total_iters")? as usize,
        },
        "CosineAnnealingLR" => SchedulerConfig::CosineAnnealing {
            t_max: s("T_max")? as usize,
            eta_min: s("Eta_min")?,
        },
        "CyclicLR" => SchedulerConfig::Cyclic {
            base_lr: s("Base_lr")?,
            max_lr: s("Max_lr")?,
            step_size_up: s("Step_size_up")? as usize,
        },
        "OneCycleLR" => SchedulerConfig::OneCycle {
            max_lr: s("Max_lr")?,
            pct_start: s("Pct_start")?,
            total_steps: sched
                .get("Total_steps")
                .map(|&v| v as usize)
                .filter(|&v| v != batch_size * 1000),
        },
        other => return Err(Error::config(format!("unknown scheduler '{other}'"))),
    };
    let config = ModelConfig {
        architecture,
        operator,
        gnn_layers: gnn,
        pseudo_gnn_layers: pseudo,
        concat_gnn_layers: concat,
        embedding_gnn_layers: embedding,
        sequence_dense_layers: sequence,
        final_dense_layers: dense,
        pooling: pooling.ok_or_else(|| need("pooling method"))?,
        embedding_dim,
        keep_activity_onehot: keep_onehot,
        graph_aggregation: aggregation,
        order,
        output_size: output_size.ok_or_else(|| need("output size"))?,
        optimizer,
        scheduler,
        loss: loss.ok_or_else(|| need("loss function"))?,
        batch_size,
        l1_lambda: l1,
    };
    config.validate()?;
    let summary = match (epoch, acc, best_loss, std) {
        (Some(best_epoch), Some(accuracy), Some(loss), Some(loss_std)) => Some(DumpSummary {
            best_epoch,
            accuracy,
            weighted_f1: f1,
            loss,
            loss_std,
        }),
        _ => None,
    };
    Ok(ParsedDump {
        config,
        inputs,
        summary,
    })
}
