use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{Aggregation, OperatorKind};
use crate::tensor::{ActivationKind, ReduceMode};
use crate::train::{LossKind, OptimizerConfig, SchedulerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    OneLevel,
    TwoLevel,
    TwoLevelPseudo,
    TwoLevelEmbedding,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::OneLevel,
        Architecture::TwoLevel,
        Architecture::TwoLevelPseudo,
        Architecture::TwoLevelEmbedding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::OneLevel => "one_level",
            Architecture::TwoLevel => "two_level",
            Architecture::TwoLevelPseudo => "two_level_pseudo",
            Architecture::TwoLevelEmbedding => "two_level_embedding",
        }
    }

    /// Short command-line spelling.
    pub fn short(self) -> &'static str {
        match self {
            Architecture::OneLevel => "one",
            Architecture::TwoLevel => "two",
            Architecture::TwoLevelPseudo => "two-pseudo",
            Architecture::TwoLevelEmbedding => "two-embed",
        }
    }

    /// Figure label, e.g. `TP-GNN`.
    pub fn label(self) -> &'static str {
        match self {
            Architecture::OneLevel => "O-GNN",
            Architecture::TwoLevel => "T-GNN",
            Architecture::TwoLevelPseudo => "TP-GNN",
            Architecture::TwoLevelEmbedding => "TE-GNN",
        }
    }

    pub fn is_two_level(self) -> bool {
        self != Architecture::OneLevel
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s || a.short() == s || a.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown architecture '{s}' (one, two, two-pseudo, two-embed)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Add,
    Max,
}

impl Pooling {
    pub const ALL: [Pooling; 3] = [Pooling::Mean, Pooling::Add, Pooling::Max];

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Add => "add",
            Pooling::Max => "max",
        }
    }

    pub fn reduce_mode(self) -> ReduceMode {
        match self {
            Pooling::Mean => ReduceMode::Mean,
            Pooling::Add => ReduceMode::Sum,
            Pooling::Max => ReduceMode::Max,
        }
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pooling::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown pooling '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormSpec {
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: ActivationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_norm: Option<BatchNormSpec>,
    #[serde(default)]
    pub skip: bool,
}

impl LayerSpec {
    pub fn new(units: usize, activation: ActivationKind) -> Self {
        Self {
            units,
            activation,
            dropout: None,
            batch_norm: None,
            skip: false,
        }
    }

    fn validate(&self, stack: &str, index: usize, allow_skip: bool) -> Result<()> {
        let at = || format!("{stack} layer {}", index + 1);
        if self.units == 0 {
            return Err(Error::config(format!("{}: units must be positive", at())));
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{}: dropout {p} must lie in [0, 1)", at())));
            }
        }
        if let Some(bn) = self.batch_norm {
            if !(bn.momentum > 0.0 && bn.momentum <= 1.0) {
                return Err(Error::config(format!("{}: batch-norm momentum {} must lie in (0, 1]", at(), bn.momentum)));
            }
            if !(bn.eps > 0.0) {
                return Err(Error::config(format!("{}: batch-norm eps must be positive", at())));
            }
        }
        if self.skip && !allow_skip {
            return Err(Error::config(format!("{}: skip connections exist only in GNN stacks", at())));
        }
        Ok(())
    }
}

fn is_true(b: &bool) -> bool {
    *b
}

fn default_true() -> bool {
    true
}

/// A complete hyperparameter assignment: model structure plus the training
/// recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub operator: OperatorKind,
    pub gnn_layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pseudo_gnn_layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub concat_gnn_layers: Vec<LayerSpec>,
    /// GNN stack over the activity embeddings (two_level_embedding).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embedding_gnn_layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sequence_dense_layers: Vec<LayerSpec>,
    pub final_dense_layers: Vec<LayerSpec>,
    pub pooling: Pooling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    /// two_level_embedding: keep the activity one-hot in the main node
    /// features.
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub keep_activity_onehot: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_aggregation: Option<Aggregation>,
    /// Filter order of tag and cheb.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    pub output_size: usize,
    pub optimizer: OptimizerConfig,
    pub scheduler: SchedulerConfig,
    pub loss: LossKind,
    pub batch_size: usize,
    #[serde(default)]
    pub l1_lambda: f64,
}

impl ModelConfig {
    /// Checks that conditional fields match the architecture and operator
    /// and that every value is structurally sound.
    pub fn validate(&self) -> Result<()> {
        let arch = self.architecture;
        let need = |present: bool, required: bool, what: &str| -> Result<()> {
            match (present, required) {
                (false, true) => Err(Error::config(format!("{arch} with {} requires {what}", self.operator))),
                (true, false) => Err(Error::config(format!("{what} is not used by {arch} with {}", self.operator))),
                _ => Ok(()),
            }
        };
        need(!self.gnn_layers.is_empty(), true, "gnn_layers")?;
        need(!self.final_dense_layers.is_empty(), true, "final_dense_layers")?;
        need(!self.sequence_dense_layers.is_empty(), arch.is_two_level(), "sequence_dense_layers")?;
        let pseudo = arch == Architecture::TwoLevelPseudo;
        need(!self.pseudo_gnn_layers.is_empty(), pseudo, "pseudo_gnn_layers")?;
        need(!self.concat_gnn_layers.is_empty(), pseudo, "concat_gnn_layers")?;
        let embed = arch == Architecture::TwoLevelEmbedding;
        need(!self.embedding_gnn_layers.is_empty(), embed, "embedding_gnn_layers")?;
        need(self.embedding_dim.is_some(), embed, "embedding_dim")?;
        if !embed && !self.keep_activity_onehot {
            return Err(Error::config("keep_activity_onehot applies only to two_level_embedding"));
        }
        need(
            self.graph_aggregation.is_some(),
            self.operator == OperatorKind::Graph,
            "graph_aggregation",
        )?;
        need(self.order.is_some(), self.operator.uses_order(), "order")?;
        if self.embedding_dim == Some(0) {
            return Err(Error::config("embedding_dim must be positive"));
        }
        if self.output_size < 2 {
            return Err(Error::config("output_size must be at least 2"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.l1_lambda >= 0.0) {
            return Err(Error::config("l1_lambda must be nonnegative"));
        }
        for (name, stack, skip) in self.stacks() {
            for (i, l) in stack.iter().enumerate() {
                l.validate(name, i, skip)?;
            }
        }
        self.optimizer.validate()?;
        self.scheduler.validate()
    }

    /// Every layer stack with its name and whether skips are allowed.
    pub fn stacks(&self) -> [(&'static str, &[LayerSpec], bool); 6] {
        [
            ("gnn", &self.gnn_layers, true),
            ("pseudo", &self.pseudo_gnn_layers, true),
            ("concat", &self.concat_gnn_layers, true),
            ("embedding", &self.embedding_gnn_layers, true),
            ("sequence", &self.sequence_dense_layers, false),
            ("dense", &self.final_dense_layers, false),
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("model config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A small valid configuration, handy as a starting point.
    pub fn minimal(architecture: Architecture, operator: OperatorKind, output_size: usize) -> Self {
        let layer = LayerSpec::new(16, ActivationKind::Relu);
        let two = architecture.is_two_level();
        let pseudo = architecture == Architecture::TwoLevelPseudo;
        let embed = architecture == Architecture::TwoLevelEmbedding;
        let when = |flag: bool| if flag { vec![layer.clone()] } else { Vec::new() };
        ModelConfig {
            architecture,
            operator,
            gnn_layers: vec![layer.clone()],
            pseudo_gnn_layers: when(pseudo),
            concat_gnn_layers: when(pseudo),
            embedding_gnn_layers: when(embed),
            sequence_dense_layers: when(two),
            final_dense_layers: vec![layer.clone()],
            pooling: Pooling::Mean,
            embedding_dim: embed.then_some(10),
            keep_activity_onehot: true,
            graph_aggregation: (operator == OperatorKind::Graph).then_some(Aggregation::Add),
            order: operator.uses_order().then_some(2),
            output_size,
            optimizer: OptimizerConfig::adam(1e-3),
            scheduler: SchedulerConfig::Constant,
            loss: LossKind::CrossEntropy,
            batch_size: 32,
            l1_lambda: 0.0,
        }
    }
}
