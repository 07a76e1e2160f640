use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Architecture, BatchNormSpec, LayerSpec, ModelConfig, Pooling};
use crate::ops::{Aggregation, OperatorKind};
use crate::tensor::ActivationKind;
use crate::train::{LossKind, OptimizerConfig, OptimizerKind, SchedulerConfig};

pub const MAX_GNN_LAYERS: i64 = 5;
pub const MAX_DENSE_LAYERS: i64 = 3;
pub const ORDER_RANGE: (i64, i64) = (1, 4);
pub const BATCH_SIZES: [usize; 5] = [16, 32, 64, 128, 512];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Choice(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Choice(v) => f.write_str(v),
        }
    }
}

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Clone, Debug, PartialEq)]
pub enum ParamKind {
    FloatLinear { low: f64, high: f64 },
    FloatLog { low: f64, high: f64 },
    Int { low: i64, high: i64 },
    Categorical { choices: Vec<String> },
}

/// One clause of a parameter's activation condition.
#[derive(Clone, Debug, PartialEq)]
pub enum Clause {
    /// An integer parameter is at least the given value.
    AtLeast(String, i64),
    /// A categorical parameter took the given choice.
    Is(String, String),
}

impl Clause {
    fn holds(&self, params: &Params) -> bool {
        match self {
            Clause::AtLeast(name, v) => matches!(params.get(name), Some(ParamValue::Int(x)) if x >= v),
            Clause::Is(name, c) => matches!(params.get(name), Some(ParamValue::Choice(x)) if x == c),
        }
    }

    fn subject(&self) -> &str {
        match self {
            Clause::AtLeast(n, _) | Clause::Is(n, _) => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    /// All clauses must hold for the parameter to be sampled.
    pub condition: Vec<Clause>,
}

impl ParamSpec {
    pub fn is_active(&self, params: &Params) -> bool {
        self.condition.iter().all(|c| c.holds(params))
    }

    /// Whether `value` lies within this parameter's bounds or choices.
    pub fn admits(&self, value: &ParamValue) -> bool {
        match (&self.kind, value) {
            (ParamKind::FloatLinear { low, high } | ParamKind::FloatLog { low, high }, ParamValue::Float(v)) => {
                v >= low && v <= high
            }
            (ParamKind::Int { low, high }, ParamValue::Int(v)) => v >= low && v <= high,
            (ParamKind::Categorical { choices }, ParamValue::Choice(c)) => choices.contains(c),
            _ => false,
        }
    }
}

/// Ordered, conditional list of parameters for one architecture and
/// operator.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub architecture: Architecture,
    pub operator: OperatorKind,
    pub params: Vec<ParamSpec>,
}

const NO_YES: [&str; 2] = ["no", "yes"];

struct Builder {
    params: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, kind: ParamKind, condition: Vec<Clause>) {
        self.params.push(ParamSpec {
            name: name.into(),
            kind,
            condition,
        });
    }

    fn float(&mut self, name: impl Into<String>, low: f64, high: f64, cond: Vec<Clause>) {
        self.add(name, ParamKind::FloatLinear { low, high }, cond);
    }

    fn log(&mut self, name: impl Into<String>, low: f64, high: f64, cond: Vec<Clause>) {
        self.add(name, ParamKind::FloatLog { low, high }, cond);
    }

    fn int(&mut self, name: impl Into<String>, low: i64, high: i64, cond: Vec<Clause>) {
        self.add(name, ParamKind::Int { low, high }, cond);
    }

    fn cat<S: ToString>(&mut self, name: impl Into<String>, choices: impl IntoIterator<Item = S>, cond: Vec<Clause>) {
        let choices = choices.into_iter().map(|c| c.to_string()).collect();
        self.add(name, ParamKind::Categorical { choices }, cond);
    }

    fn stack(&mut self, prefix: &str, max_layers: i64, gnn: bool) {
        let count = format!("{prefix}_layers");
        self.int(&count, 1, max_layers, vec![]);
        for i in 1..=max_layers {
            let p = format!("{prefix}_layer_{i}");
            let on = || if i > 1 { vec![Clause::AtLeast(count.clone(), i)] } else { vec![] };
            let with = |flag: &str| {
                let mut c = on();
                c.push(Clause::Is(format!("{p}_{flag}"), "yes".into()));
                c
            };
            self.int(format!("{p}_units"), 16, 512, on());
            self.cat(format!("{p}_activation"), ActivationKind::ALL.map(ActivationKind::name), on());
            self.cat(format!("{p}_dropout"), NO_YES, on());
            self.float(format!("{p}_dropout_rate"), 0.2, 0.7, with("dropout"));
            self.cat(format!("{p}_batch_norm"), NO_YES, on());
            self.float(format!("{p}_bn_momentum"), 0.1, 0.999, with("batch_norm"));
            self.log(format!("{p}_bn_eps"), 1e-5, 1e-2, with("batch_norm"));
            if gnn {
                self.cat(format!("{p}_skip"), NO_YES, on());
            }
        }
    }
}

fn is(name: &str, choice: &str) -> Vec<Clause> {
    vec![Clause::Is(name.into(), choice.into())]
}

/// Every tunable parameter applicable to the pair.
pub fn build_search_space(architecture: Architecture, operator: OperatorKind) -> SearchSpace {
    let mut b = Builder { params: Vec::new() };
    b.stack("gnn", MAX_GNN_LAYERS, true);
    if architecture == Architecture::TwoLevelPseudo {
        b.stack("pseudo", MAX_GNN_LAYERS, true);
        b.stack("concat", MAX_GNN_LAYERS, true);
    }
    if architecture == Architecture::TwoLevelEmbedding {
        b.int("embedding_dim", 10, 50, vec![]);
        b.stack("embedding", MAX_GNN_LAYERS, true);
    }
    if operator == OperatorKind::Graph {
        b.cat("graph_aggregation", Aggregation::ALL.map(Aggregation::name), vec![]);
    }
    if operator.uses_order() {
        b.int("order", ORDER_RANGE.0, ORDER_RANGE.1, vec![]);
    }
    b.cat("pooling", Pooling::ALL.map(Pooling::name), vec![]);
    if architecture.is_two_level() {
        b.stack("sequence", MAX_DENSE_LAYERS, false);
    }
    b.stack("dense", MAX_DENSE_LAYERS, false);

    b.cat("optimizer", ["adam", "sgd", "rmsprop"], vec![]);
    b.log("learning_rate", 1e-5, 1e-2, vec![]);
    b.float("weight_decay", 0.0, 1e-3, vec![]);
    b.float("l1_lambda", 0.0, 1e-3, vec![]);
    b.float("adam_beta1", 0.85, 0.99, is("optimizer", "adam"));
    b.float("adam_beta2", 0.99, 0.999, is("optimizer", "adam"));
    b.float("sgd_momentum", 0.0, 0.9, is("optimizer", "sgd"));
    b.float("rmsprop_alpha", 0.9, 0.999, is("optimizer", "rmsprop"));
    b.float("rmsprop_momentum", 0.0, 0.9, is("optimizer", "rmsprop"));
    b.log("rmsprop_eps", 1e-9, 1e-7, is("optimizer", "rmsprop"));

    let kinds = [
        "step",
        "exponential",
        "reduce_on_plateau",
        "polynomial",
        "cosine_annealing",
        "cyclic",
        "one_cycle",
    ];
    b.cat("scheduler", kinds, vec![]);
    b.int("step_size", 1, 50, is("scheduler", "step"));
    b.float("step_gamma", 0.1, 0.9, is("scheduler", "step"));
    b.float("exponential_gamma", 0.85, 0.99, is("scheduler", "exponential"));
    b.float("plateau_factor", 0.1, 0.9, is("scheduler", "reduce_on_plateau"));
    b.int("plateau_patience", 1, 50, is("scheduler", "reduce_on_plateau"));
    b.log("plateau_threshold", 1e-4, 1e-2, is("scheduler", "reduce_on_plateau"));
    b.log("plateau_eps", 1e-8, 1e-4, is("scheduler", "reduce_on_plateau"));
    b.float("polynomial_power", 0.1, 2.0, is("scheduler", "polynomial"));
    b.int("polynomial_total_iters", 2, 300, is("scheduler", "polynomial"));
    b.int("cosine_t_max", 10, 100, is("scheduler", "cosine_annealing"));
    b.log("cosine_eta_min", 1e-6, 1e-2, is("scheduler", "cosine_annealing"));
    b.log("cyclic_base_lr", 1e-5, 1e-2, is("scheduler", "cyclic"));
    b.log("cyclic_max_lr", 1e-3, 1e-1, is("scheduler", "cyclic"));
    b.int("cyclic_step_size_up", 5, 200, is("scheduler", "cyclic"));
    b.log("one_cycle_max_lr", 1e-3, 1e-1, is("scheduler", "one_cycle"));
    b.float("one_cycle_pct_start", 0.1, 0.5, is("scheduler", "one_cycle"));

    b.cat("loss", LossKind::ALL.map(LossKind::name), vec![]);
    b.cat("batch_size", BATCH_SIZES, vec![]);
    SearchSpace {
        architecture,
        operator,
        params: b.params,
    }
}

impl SearchSpace {
    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Checks that conditions only reference earlier parameters and that
    /// bounds are finite and ordered.
    pub fn check(&self) -> Result<()> {
        for (i, p) in self.params.iter().enumerate() {
            for c in &p.condition {
                if !self.params[..i].iter().any(|q| q.name == c.subject()) {
                    return Err(Error::config(format!("{} depends on a later or unknown parameter", p.name)));
                }
            }
            let ok = match &p.kind {
                ParamKind::FloatLinear { low, high } => low.is_finite() && high.is_finite() && low < high,
                ParamKind::FloatLog { low, high } => *low > 0.0 && high.is_finite() && low < high,
                ParamKind::Int { low, high } => low < high,
                ParamKind::Categorical { choices } => !choices.is_empty(),
            };
            if !ok {
                return Err(Error::config(format!("{} has invalid bounds", p.name)));
            }
        }
        Ok(())
    }

    /// Confirms that exactly the active parameters are present and that
    /// each lies within its bounds.
    pub fn validate_params(&self, params: &Params) -> Result<()> {
        for spec in &self.params {
            match (spec.is_active(params), params.get(&spec.name)) {
                (true, Some(v)) if spec.admits(v) => {}
                (true, Some(v)) => return Err(Error::config(format!("{} = {v} is out of bounds", spec.name))),
                (true, None) => return Err(Error::config(format!("{} is missing", spec.name))),
                (false, Some(_)) => return Err(Error::config(format!("{} is present although inactive", spec.name))),
                (false, None) => {}
            }
        }
        if let Some(extra) = params.keys().find(|k| self.get(k).is_none()) {
            return Err(Error::config(format!("unknown parameter {extra}")));
        }
        Ok(())
    }

    /// Turns a complete assignment into a model configuration.
    pub fn to_config(&self, params: &Params, output_size: usize) -> Result<ModelConfig> {
        self.validate_params(params)?;
        let r = Reader(params);
        let stack = |prefix: &str, gnn: bool| -> Result<Vec<LayerSpec>> {
            let n = r.int(&format!("{prefix}_layers"))?;
            (1..=n)
                .map(|i| {
                    let p = format!("{prefix}_layer_{i}");
                    let activation = r
                        .choice(&format!("{p}_activation"))?
                        .parse::<ActivationKind>()
                        .map_err(Error::Config)?;
                    Ok(LayerSpec {
                        units: r.int(&format!("{p}_units"))? as usize,
                        activation,
                        dropout: r.flag(&format!("{p}_dropout"))?.then(|| r.float(&format!("{p}_dropout_rate"))).transpose()?,
                        batch_norm: if r.flag(&format!("{p}_batch_norm"))? {
                            Some(BatchNormSpec {
                                momentum: r.float(&format!("{p}_bn_momentum"))?,
                                eps: r.float(&format!("{p}_bn_eps"))?,
                            })
                        } else {
                            None
                        },
                        skip: gnn && r.flag(&format!("{p}_skip"))?,
                    })
                })
                .collect()
        };
        let arch = self.architecture;
        let optimizer_kind = match r.choice("optimizer")? {
            "adam" => OptimizerKind::Adam {
                beta1: r.float("adam_beta1")?,
                beta2: r.float("adam_beta2")?,
            },
            "sgd" => OptimizerKind::Sgd {
                momentum: r.float("sgd_momentum")?,
            },
            _ => OptimizerKind::Rmsprop {
                alpha: r.float("rmsprop_alpha")?,
                momentum: r.float("rmsprop_momentum")?,
                eps: r.float("rmsprop_eps")?,
            },
        };
        let scheduler = match r.choice("scheduler")? {
            "step" => SchedulerConfig::Step {
                step_size: r.int("step_size")? as usize,
                gamma: r.float("step_gamma")?,
            },
            "exponential" => SchedulerConfig::Exponential {
                gamma: r.float("exponential_gamma")?,
            },
            "reduce_on_plateau" => SchedulerConfig::ReduceOnPlateau {
                factor: r.float("plateau_factor")?,
                patience: r.int("plateau_patience")? as usize,
                threshold: r.float("plateau_threshold")?,
                eps: r.float("plateau_eps")?,
            },
            "polynomial" => SchedulerConfig::Polynomial {
                power: r.float("polynomial_power")?,
                total_iters: r.int("polynomial_total_iters")? as usize,
            },
            "cosine_annealing" => SchedulerConfig::CosineAnnealing {
                t_max: r.int("cosine_t_max")? as usize,
                eta_min: r.float("cosine_eta_min")?,
            },
            "cyclic" => {
                let a = r.float("cyclic_base_lr")?;
                let b = r.float("cyclic_max_lr")?;
                SchedulerConfig::Cyclic {
                    base_lr: a.min(b),
                    max_lr: a.max(b),
                    step_size_up: r.int("cyclic_step_size_up")? as usize,
                }
            }
            _ => SchedulerConfig::OneCycle {
                max_lr: r.float("one_cycle_max_lr")?,
                pct_start: r.float("one_cycle_pct_start")?,
                total_steps: None,
            },
        };
        let config = ModelConfig {
            architecture: arch,
            operator: self.operator,
            gnn_layers: stack("gnn", true)?,
            pseudo_gnn_layers: if arch == Architecture::TwoLevelPseudo { stack("pseudo", true)? } else { Vec::new() },
            concat_gnn_layers: if arch == Architecture::TwoLevelPseudo { stack("concat", true)? } else { Vec::new() },
            embedding_gnn_layers: if arch == Architecture::TwoLevelEmbedding {
                stack("embedding", true)?
            } else {
                Vec::new()
            },
            sequence_dense_layers: if arch.is_two_level() { stack("sequence", false)? } else { Vec::new() },
            final_dense_layers: stack("dense", false)?,
            pooling: r.choice("pooling")?.parse()?,
            embedding_dim: if arch == Architecture::TwoLevelEmbedding {
                Some(r.int("embedding_dim")? as usize)
            } else {
                None
            },
            keep_activity_onehot: true,
            graph_aggregation: if self.operator == OperatorKind::Graph {
                Some(r.choice("graph_aggregation")?.parse()?)
            } else {
                None
            },
            order: if self.operator.uses_order() { Some(r.int("order")? as usize) } else { None },
            output_size,
            optimizer: OptimizerConfig {
                learning_rate: r.float("learning_rate")?,
                weight_decay: r.float("weight_decay")?,
                kind: optimizer_kind,
            },
            scheduler,
            loss: r.choice("loss")?.parse()?,
            batch_size: r.choice("batch_size")?.parse().map_err(|_| Error::config("bad batch size"))?,
            l1_lambda: r.float("l1_lambda")?,
        };
        config.validate()?;
        Ok(config)
    }
}

struct Reader<'a>(&'a Params);

impl Reader<'_> {
    fn get(&self, name: &str) -> Result<&ParamValue> {
        self.0.get(name).ok_or_else(|| Error::config(format!("{name} is missing")))
    }

    fn int(&self, name: &str) -> Result<i64> {
        match self.get(name)? {
            ParamValue::Int(v) => Ok(*v),
            v => Err(Error::config(format!("{name} = {v} is not an integer"))),
        }
    }

    fn float(&self, name: &str) -> Result<f64> {
        match self.get(name)? {
            ParamValue::Float(v) => Ok(*v),
            ParamValue::Int(v) => Ok(*v as f64),
            v => Err(Error::config(format!("{name} = {v} is not a number"))),
        }
    }

    fn choice(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            ParamValue::Choice(v) => Ok(v),
            v => Err(Error::config(format!("{name} = {v} is not a choice"))),
        }
    }

    fn flag(&self, name: &str) -> Result<bool> {
        Ok(self.choice(name)? == "yes")
    }
}
