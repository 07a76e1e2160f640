use std::cell::{Cell, RefCell};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DatasetDims;
use crate::model::batch::Batch;
use crate::model::config::{Architecture, LayerSpec, ModelConfig, Pooling};
use crate::model::layers::{dense_stack, gnn_stack, run_dense, run_gnn, BatchNorm, Ctx, DenseLayer, GnnLayer, Linear};
use crate::ops::{Aggregation, OperatorKind};
use crate::tensor::{Matrix, Tensor};

pub const EMBEDDING_INIT_BOUND: f64 = 0.05;

/// Input widths a model is built against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub d_node: usize,
    pub d_graph: usize,
    pub n_bins: usize,
    pub n_activities: usize,
}

impl From<&DatasetDims> for InputDims {
    fn from(d: &DatasetDims) -> Self {
        Self {
            d_node: d.d_node,
            d_graph: d.d_graph,
            n_bins: d.n_bins,
            n_activities: d.n_activities,
        }
    }
}

/// Parameter values and batch-norm running statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub parameters: Vec<Matrix>,
    pub running_stats: Vec<(Vec<f64>, Vec<f64>)>,
}

/// One of the four hypermodel architectures, wired from a [`ModelConfig`].
#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    dims: InputDims,
    gnn: Vec<GnnLayer>,
    pseudo: Vec<GnnLayer>,
    concat: Vec<GnnLayer>,
    embedding: Option<Tensor>,
    embedding_gnn: Vec<GnnLayer>,
    sequence: Vec<DenseLayer>,
    dense: Vec<DenseLayer>,
    output: Linear,
    training: Cell<bool>,
    rng: RefCell<ChaCha8Rng>,
}

fn last_units(specs: &[LayerSpec]) -> usize {
    specs.last().map_or(0, |s| s.units)
}

impl Model {
    /// Builds a model; `seed` drives initialization and the dropout stream.
    pub fn new(config: &ModelConfig, dims: InputDims, seed: u64) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture;
        let main_in = match arch {
            Architecture::OneLevel => dims.d_node + dims.d_graph,
            Architecture::TwoLevelEmbedding if !config.keep_activity_onehot => {
                dims.d_node.saturating_sub(dims.n_activities)
            }
            _ => dims.d_node,
        };
        if main_in == 0 {
            return Err(Error::config("node feature width is zero"));
        }
        if arch.is_two_level() && dims.d_graph == 0 {
            return Err(Error::config(format!("{arch} needs at least one sequence attribute")));
        }
        if arch == Architecture::TwoLevelPseudo && dims.n_bins == 0 {
            return Err(Error::config("two_level_pseudo needs at least one duration bin"));
        }
        if arch == Architecture::TwoLevelEmbedding && dims.n_activities == 0 {
            return Err(Error::config("two_level_embedding needs at least one activity"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = config.operator;
        let order = config.order.unwrap_or(0);
        let agg = config.graph_aggregation.unwrap_or(Aggregation::Add);
        let gnn = gnn_stack(kind, main_in, &config.gnn_layers, order, agg, &mut rng)?;
        let pseudo = gnn_stack(kind, dims.n_bins, &config.pseudo_gnn_layers, order, agg, &mut rng)?;
        let concat_in = last_units(&config.gnn_layers) + last_units(&config.pseudo_gnn_layers);
        let concat = gnn_stack(kind, concat_in, &config.concat_gnn_layers, order, agg, &mut rng)?;
        let embedding = config.embedding_dim.map(|d| {
            let b = EMBEDDING_INIT_BOUND;
            let data = (0..dims.n_activities * d)
                .map(|_| rand::Rng::random_range(&mut rng, -b..=b))
                .collect();
            Tensor::parameter(Matrix::new(dims.n_activities, d, data).expect("sized above"))
        });
        let embedding_gnn = gnn_stack(
            kind,
            config.embedding_dim.unwrap_or(0),
            &config.embedding_gnn_layers,
            order,
            agg,
            &mut rng,
        )?;
        let pooled = match arch {
            Architecture::TwoLevelPseudo => last_units(&config.concat_gnn_layers),
            Architecture::TwoLevelEmbedding => {
                last_units(&config.gnn_layers) + last_units(&config.embedding_gnn_layers)
            }
            _ => last_units(&config.gnn_layers),
        };
        let sequence = dense_stack(dims.d_graph, &config.sequence_dense_layers, &mut rng);
        let final_in = pooled + last_units(&config.sequence_dense_layers);
        let dense = dense_stack(final_in, &config.final_dense_layers, &mut rng);
        let output = Linear::new(last_units(&config.final_dense_layers), config.output_size, &mut rng);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        dropout_rng.set_stream(1);
        Ok(Self {
            config: config.clone(),
            dims,
            gnn,
            pseudo,
            concat,
            embedding,
            embedding_gnn,
            sequence,
            dense,
            output,
            training: Cell::new(true),
            rng: RefCell::new(dropout_rng),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> InputDims {
        self.dims
    }

    pub fn set_training(&self, training: bool) {
        self.training.set(training);
    }

    pub fn is_training(&self) -> bool {
        self.training.get()
    }

    /// Width of the first layer of the main GNN stack.
    pub fn gnn_input_width(&self) -> usize {
        self.gnn[0].op.in_dim
    }

    /// Input width of the final dense stack.
    pub fn final_input_width(&self) -> usize {
        self.dense[0].linear.weight.rows()
    }

    pub fn embedding_table(&self) -> Option<&Tensor> {
        self.embedding.as_ref()
    }

    fn gnn_layers(&self) -> impl Iterator<Item = &GnnLayer> {
        self.gnn.iter().chain(&self.pseudo).chain(&self.concat).chain(&self.embedding_gnn)
    }

    fn dense_layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.sequence.iter().chain(&self.dense)
    }

    /// Every trainable tensor in a fixed order.
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p: Vec<Tensor> = self.gnn_layers().flat_map(GnnLayer::parameters).collect();
        p.extend(self.embedding.clone());
        p.extend(self.dense_layers().flat_map(DenseLayer::parameters));
        p.extend(self.output.parameters());
        p
    }

    pub fn n_parameters(&self) -> usize {
        self.parameters().iter().map(Tensor::len).sum()
    }

    fn batch_norms(&self) -> Vec<&BatchNorm> {
        self.gnn_layers()
            .filter_map(|l| l.bn.as_ref())
            .chain(self.dense_layers().filter_map(|l| l.bn.as_ref()))
            .collect()
    }

    pub fn state(&self) -> ModelState {
        ModelState {
            parameters: self.parameters().iter().map(Tensor::to_matrix).collect(),
            running_stats: self
                .batch_norms()
                .iter()
                .map(|b| (b.running_mean.borrow().clone(), b.running_var.borrow().clone()))
                .collect(),
        }
    }

    pub fn load_state(&self, state: &ModelState) -> Result<()> {
        let params = self.parameters();
        let bns = self.batch_norms();
        if params.len() != state.parameters.len() || bns.len() != state.running_stats.len() {
            return Err(Error::contract("model state does not match this model"));
        }
        for (p, m) in params.iter().zip(&state.parameters) {
            p.set_values(m)?;
        }
        for (b, (mean, var)) in bns.iter().zip(&state.running_stats) {
            *b.running_mean.borrow_mut() = mean.clone();
            *b.running_var.borrow_mut() = var.clone();
        }
        Ok(())
    }

    /// Raw class scores, one row per graph.
    pub fn forward(&self, batch: &Batch) -> Result<Tensor> {
        let d = self.dims;
        if batch.node_features.cols() != d.d_node || batch.graph_features.cols() != d.d_graph {
            return Err(Error::Shape {
                op: "model input",
                left: (batch.node_features.cols(), batch.graph_features.cols()),
                right: (d.d_node, d.d_graph),
            });
        }
        let ctx = Ctx {
            training: self.training.get(),
            rng: &self.rng,
        };
        let graph = &batch.graph;
        let nodes = Tensor::constant(batch.node_features.clone());
        let seq_in = Tensor::constant(batch.graph_features.clone());
        let pool = |h: Tensor| h.reduce_rows(batch.membership.clone(), self.config.pooling.reduce_mode());

        let pooled = match self.config.architecture {
            Architecture::OneLevel => {
                let x = if d.d_graph > 0 {
                    let index: Rc<[Option<usize>]> = batch.membership.iter().map(|&g| Some(g)).collect();
                    Tensor::concat_cols(&[nodes, seq_in.gather_rows(index)?])?
                } else {
                    nodes
                };
                let pooled = pool(run_gnn(&self.gnn, x, graph, &ctx)?)?;
                return self.output.forward(&run_dense(&self.dense, pooled, &ctx)?);
            }
            Architecture::TwoLevel => pool(run_gnn(&self.gnn, nodes, graph, &ctx)?)?,
            Architecture::TwoLevelPseudo => {
                let main = run_gnn(&self.gnn, nodes, graph, &ctx)?;
                let bins = Tensor::constant(batch.bin_indicators(d.n_bins)?);
                let aux = run_gnn(&self.pseudo, bins, graph, &ctx)?;
                let fused = Tensor::concat_cols(&[main, aux])?;
                pool(run_gnn(&self.concat, fused, graph, &ctx)?)?
            }
            Architecture::TwoLevelEmbedding => {
                let main_in = if self.config.keep_activity_onehot {
                    nodes
                } else {
                    Tensor::constant(batch.node_features.columns(d.n_activities, d.d_node))
                };
                let main = run_gnn(&self.gnn, main_in, graph, &ctx)?;
                let table = self.embedding.as_ref().expect("built with the architecture");
                let embedded = table.gather_rows(batch.activity_ids.clone())?;
                let aux = run_gnn(&self.embedding_gnn, embedded, graph, &ctx)?;
                pool(Tensor::concat_cols(&[main, aux])?)?
            }
        };
        let seq = run_dense(&self.sequence, seq_in, &ctx)?;
        let fused = Tensor::concat_cols(&[pooled, seq])?;
        self.output.forward(&run_dense(&self.dense, fused, &ctx)?)
    }

    /// Pre-activation output of main GNN layer `index` on `x`.
    pub fn gnn_pre_activation(&self, index: usize, x: &Tensor, batch: &Batch) -> Result<Tensor> {
        let layer = self
            .gnn
            .get(index)
            .ok_or_else(|| Error::contract(format!("no GNN layer {index}")))?;
        let ctx = Ctx {
            training: self.training.get(),
            rng: &self.rng,
        };
        layer.pre_activation(x, &batch.graph, &ctx)
    }

    /// Sets every weight of main GNN layer `index` (operator and skip
    /// projection) to zero.
    pub fn zero_gnn_layer(&self, index: usize) -> Result<()> {
        let layer = self
            .gnn
            .get(index)
            .ok_or_else(|| Error::contract(format!("no GNN layer {index}")))?;
        for w in layer.op.weights.iter().chain(&layer.projection) {
            w.update_leaf(|v, _| v.fill(0.0));
        }
        Ok(())
    }

    /// Zeroes the whole sequence branch so logits no longer depend on the
    /// graph-level features.
    pub fn zero_sequence_branch(&self) {
        for l in &self.sequence {
            l.linear.weight.update_leaf(|v, _| v.fill(0.0));
        }
    }

    /// Zeroes the rows of the first main GNN weight(s) that read the
    /// graph-level columns of a one-level model.
    pub fn zero_graph_feature_weights(&self) {
        let first = &self.gnn[0];
        let d_node = self.dims.d_node;
        let in_dim = first.op.in_dim;
        let reading = match first.op.kind {
            OperatorKind::Gin => &first.op.weights[..1],
            _ => &first.op.weights[..],
        };
        for w in reading.iter().chain(&first.projection) {
            let cols = w.cols();
            let rows = w.rows();
            w.update_leaf(|v, _| {
                for r in 0..rows {
                    if r % in_dim >= d_node {
                        v[r * cols..(r + 1) * cols].fill(0.0);
                    }
                }
            });
        }
    }

    pub fn pooling(&self) -> Pooling {
        self.config.pooling
    }
}
