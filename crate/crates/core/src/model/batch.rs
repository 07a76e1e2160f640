use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ingest::EncodedGraph;
use crate::ops::Graph;
use crate::tensor::Matrix;

/// Several encoded graphs stacked into one disjoint union.
#[derive(Clone, Debug)]
pub struct Batch {
    pub graph: Graph,
    /// All nodes, graph by graph.
    pub node_features: Matrix,
    /// One row per graph.
    pub graph_features: Matrix,
    /// Graph index of every node.
    pub membership: Rc<[usize]>,
    pub activity_ids: Rc<[Option<usize>]>,
    pub duration_bins: Vec<usize>,
    pub labels: Rc<[usize]>,
}

impl Batch {
    pub fn from_graphs(graphs: &[&EncodedGraph]) -> Result<Self> {
        let first = graphs.first().ok_or_else(|| Error::contract("a batch needs at least one graph"))?;
        let d_node = first.d_node();
        let d_graph = first.graph_features.len();
        let total: usize = graphs.iter().map(|g| g.n_nodes()).sum();
        let mut nodes = Vec::with_capacity(total * d_node);
        let mut graph_rows = Vec::with_capacity(graphs.len() * d_graph);
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        let mut membership = Vec::with_capacity(total);
        let mut activity_ids = Vec::with_capacity(total);
        let mut duration_bins = Vec::with_capacity(total);
        let mut labels = Vec::with_capacity(graphs.len());
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            if g.d_node() != d_node || g.graph_features.len() != d_graph {
                return Err(Error::Shape {
                    op: "batch",
                    left: (d_node, d_graph),
                    right: (g.d_node(), g.graph_features.len()),
                });
            }
            nodes.extend_from_slice(g.node_features.data());
            graph_rows.extend_from_slice(&g.graph_features);
            sources.extend(g.edge_index[0].iter().map(|s| s + offset));
            targets.extend(g.edge_index[1].iter().map(|t| t + offset));
            weights.extend_from_slice(&g.edge_weights);
            membership.extend(std::iter::repeat_n(gi, g.n_nodes()));
            activity_ids.extend_from_slice(&g.activity_ids);
            duration_bins.extend_from_slice(&g.duration_bins);
            labels.push(g.label);
            offset += g.n_nodes();
        }
        Ok(Self {
            graph: Graph::new(total, [&sources, &targets], &weights)?,
            node_features: Matrix::new(total, d_node, nodes)?,
            graph_features: Matrix::new(graphs.len(), d_graph, graph_rows)?,
            membership: membership.into(),
            activity_ids: activity_ids.into(),
            duration_bins,
            labels: labels.into(),
        })
    }

    pub fn n_graphs(&self) -> usize {
        self.labels.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    /// One-hot duration-bin rows of width `n_bins`.
    pub fn bin_indicators(&self, n_bins: usize) -> Result<Matrix> {
        let mut m = Matrix::zeros(self.n_nodes(), n_bins);
        for (i, &b) in self.duration_bins.iter().enumerate() {
            if b >= n_bins {
                return Err(Error::contract(format!("duration bin {b} out of range for {n_bins} bins")));
            }
            m.set(i, b, 1.0);
        }
        Ok(m)
    }
}
