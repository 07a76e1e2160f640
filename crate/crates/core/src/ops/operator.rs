use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ActivationKind, Matrix, Tensor};

use super::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Gcn,
    Graph,
    Sage,
    Tag,
    Cheb,
    Gin,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 6] = [
        OperatorKind::Gcn,
        OperatorKind::Graph,
        OperatorKind::Sage,
        OperatorKind::Tag,
        OperatorKind::Cheb,
        OperatorKind::Gin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Gcn => "gcn",
            OperatorKind::Graph => "graph",
            OperatorKind::Sage => "sage",
            OperatorKind::Tag => "tag",
            OperatorKind::Cheb => "cheb",
            OperatorKind::Gin => "gin",
        }
    }

    /// Display name of the layer type, e.g. `GCN`.
    pub fn label(self) -> &'static str {
        match self {
            OperatorKind::Gcn => "GCN",
            OperatorKind::Graph => "GraphConv",
            OperatorKind::Sage => "SAGE",
            OperatorKind::Tag => "TAG",
            OperatorKind::Cheb => "Cheb",
            OperatorKind::Gin => "GIN",
        }
    }

    /// Whether the operator has a filter order.
    pub fn uses_order(self) -> bool {
        matches!(self, OperatorKind::Tag | OperatorKind::Cheb)
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let key = lower.trim_end_matches("conv");
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::config(format!("unknown operator '{s}' (gcn, graph, sage, tag, cheb, gin)")))
    }
}

/// Neighbor aggregation of the `graph` operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Add,
    Mean,
    Max,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Add, Aggregation::Mean, Aggregation::Max];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Add => "add",
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aggregation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown aggregation '{s}'")))
    }
}

/// Uniform `±1/√fan_in` initialization.
pub fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Matrix::new(rows, cols, data).expect("sized above")
}

/// One message-passing layer.
///
/// `activation` is the outer nonlinearity for gcn, graph, sage and tag, the
/// hidden nonlinearity of the gin MLP, and unused by cheb. `None` means
/// identity.
#[derive(Clone, Debug)]
pub struct Operator {
    pub kind: OperatorKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// gcn/graph: `[W]` (in×out); sage: `[W]` (2·in×out, self half first);
    /// tag/cheb: `[Θ_0 … Θ_K]`; gin: `[W_1 (in×out), W_2 (out×out)]`.
    pub weights: Vec<Tensor>,
    pub order: usize,
    pub epsilon: f64,
    pub aggregation: Aggregation,
    pub activation: Option<ActivationKind>,
}

impl Operator {
    pub fn new(
        kind: OperatorKind,
        in_dim: usize,
        out_dim: usize,
        order: usize,
        aggregation: Aggregation,
        activation: Option<ActivationKind>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config(format!("{kind} layer needs positive dims, got {in_dim}->{out_dim}")));
        }
        let shapes: Vec<(usize, usize)> = match kind {
            OperatorKind::Gcn | OperatorKind::Graph => vec![(in_dim, out_dim)],
            OperatorKind::Sage => vec![(2 * in_dim, out_dim)],
            OperatorKind::Tag | OperatorKind::Cheb => vec![(in_dim, out_dim); order + 1],
            OperatorKind::Gin => vec![(in_dim, out_dim), (out_dim, out_dim)],
        };
        let weights = shapes
            .into_iter()
            .map(|(r, c)| Tensor::parameter(init_uniform(r, c, r, rng)))
            .collect();
        Ok(Self {
            kind,
            in_dim,
            out_dim,
            weights,
            order,
            epsilon: 0.0,
            aggregation,
            activation,
        })
    }

    /// Builds an operator around given weight matrices.
    pub fn with_weights(
        kind: OperatorKind,
        weights: Vec<Matrix>,
        aggregation: Aggregation,
        activation: Option<ActivationKind>,
    ) -> Result<Self> {
        let first = weights
            .first()
            .ok_or_else(|| Error::config("an operator needs at least one weight matrix"))?;
        let (rows, out_dim) = first.shape();
        let in_dim = if kind == OperatorKind::Sage { rows / 2 } else { rows };
        let order = if kind.uses_order() { weights.len() - 1 } else { 0 };
        let expected: Vec<(usize, usize)> = match kind {
            OperatorKind::Gcn | OperatorKind::Graph => vec![(in_dim, out_dim)],
            OperatorKind::Sage => vec![(2 * in_dim, out_dim)],
            OperatorKind::Tag | OperatorKind::Cheb => vec![(in_dim, out_dim); order + 1],
            OperatorKind::Gin => vec![(in_dim, out_dim), (out_dim, out_dim)],
        };
        let actual: Vec<(usize, usize)> = weights.iter().map(Matrix::shape).collect();
        if actual != expected {
            return Err(Error::config(format!("{kind} weights have shapes {actual:?}, expected {expected:?}")));
        }
        Ok(Self {
            kind,
            in_dim,
            out_dim,
            weights: weights.into_iter().map(Tensor::parameter).collect(),
            order,
            epsilon: 0.0,
            aggregation,
            activation,
        })
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.weights.clone()
    }

    fn outer(&self, x: Tensor) -> Tensor {
        match self.activation {
            Some(a) => x.activation(a),
            None => x,
        }
    }

    pub fn forward(&self, x: &Tensor, graph: &Graph) -> Result<Tensor> {
        if x.rows() != graph.n_nodes() {
            return Err(Error::Shape {
                op: "operator input",
                left: x.shape(),
                right: (graph.n_nodes(), self.in_dim),
            });
        }
        let w = &self.weights;
        match self.kind {
            OperatorKind::Gcn => {
                let h = x.matmul(&w[0])?;
                Ok(self.outer(h.propagate(graph.gcn_matrix())?))
            }
            OperatorKind::Graph => {
                let h = x.matmul(&w[0])?;
                let agg = match self.aggregation {
                    Aggregation::Add => h.propagate(graph.add_matrix())?,
                    Aggregation::Mean => h.propagate(graph.mean_matrix())?,
                    Aggregation::Max => h.neighbor_max(graph.in_neighbors())?,
                };
                Ok(self.outer(agg))
            }
            OperatorKind::Sage => {
                let neighbors = x.propagate(graph.sage_matrix())?;
                let h = Tensor::concat_cols(&[x.clone(), neighbors])?;
                Ok(self.outer(h.matmul(&w[0])?))
            }
            OperatorKind::Tag => {
                let mut power = x.clone();
                let mut out = power.matmul(&w[0])?;
                for theta in &w[1..] {
                    power = power.propagate(graph.add_matrix())?;
                    out = out.add(&power.matmul(theta)?)?;
                }
                Ok(self.outer(out))
            }
            OperatorKind::Cheb => {
                let lap = graph.scaled_laplacian();
                let mut prev = x.clone();
                let mut out = prev.matmul(&w[0])?;
                if w.len() > 1 {
                    let mut cur = x.propagate(lap)?;
                    out = out.add(&cur.matmul(&w[1])?)?;
                    for theta in &w[2..] {
                        let next = cur.propagate(lap)?.scale(2.0).sub(&prev)?;
                        out = out.add(&next.matmul(theta)?)?;
                        prev = cur;
                        cur = next;
                    }
                }
                Ok(out)
            }
            OperatorKind::Gin => {
                let agg = x.propagate(&graph.gin_matrix(self.epsilon))?;
                let hidden = self.outer(agg.matmul(&w[0])?);
                hidden.matmul(&w[1])
            }
        }
    }
}
