//! Message-passing operators over directed weighted graphs.
//!
//! All six operators consume node features and a [`Graph`] and return new
//! node features. The weighted adjacency stores `A[target][source] = w`, so
//! information flows forward along the event chain.

mod graph;
mod operator;

pub use graph::Graph;
pub use operator::{init_uniform, Aggregation, Operator, OperatorKind};

use crate::error::Result;
use crate::tensor::Matrix;

/// Dense weighted adjacency of a graph given by its edge list.
pub fn build_adjacency(n_nodes: usize, edge_index: [&[usize]; 2], weights: &[f64], self_loops: bool) -> Result<Matrix> {
    Ok(Graph::new(n_nodes, edge_index, weights)?.adjacency(self_loops))
}

#[cfg(test)]
mod tests;
