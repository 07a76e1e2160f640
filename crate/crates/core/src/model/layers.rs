use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::config::{BatchNormSpec, LayerSpec};
use crate::ops::{init_uniform, Aggregation, Graph, Operator, OperatorKind};
use crate::tensor::{ActivationKind, Matrix, Tensor};

/// Mode and randomness shared by every layer during one forward pass.
pub(crate) struct Ctx<'a> {
    pub training: bool,
    pub rng: &'a RefCell<ChaCha8Rng>,
}

fn row(values: Vec<f64>) -> Tensor {
    let d = values.len();
    Tensor::constant(Matrix::new(1, d, values).expect("one row"))
}

#[derive(Clone, Debug)]
pub(crate) struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub spec: BatchNormSpec,
    pub running_mean: RefCell<Vec<f64>>,
    pub running_var: RefCell<Vec<f64>>,
}

impl BatchNorm {
    fn new(d: usize, spec: BatchNormSpec) -> Self {
        Self {
            gamma: Tensor::parameter(Matrix::filled(1, d, 1.0)),
            beta: Tensor::parameter(Matrix::zeros(1, d)),
            spec,
            running_mean: RefCell::new(vec![0.0; d]),
            running_var: RefCell::new(vec![1.0; d]),
        }
    }

    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        if ctx.training {
            let n = x.rows();
            let (y, mean, var) = x.batch_norm(&self.gamma, &self.beta, self.spec.eps)?;
            let m = self.spec.momentum;
            let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            for (r, v) in self.running_mean.borrow_mut().iter_mut().zip(&mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in self.running_var.borrow_mut().iter_mut().zip(&var) {
                *r = (1.0 - m) * *r + m * v * unbias;
            }
            Ok(y)
        } else {
            let shift = row(self.running_mean.borrow().iter().map(|m| -m).collect());
            let scale = row(self.running_var.borrow().iter().map(|v| 1.0 / (v + self.spec.eps).sqrt()).collect());
            x.add_row(&shift)?.mul_row(&scale)?.mul_row(&self.gamma)?.add_row(&self.beta)
        }
    }
}

fn dropout(x: Tensor, rate: Option<f64>, ctx: &Ctx) -> Result<Tensor> {
    match rate {
        Some(p) if ctx.training && p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mut rng = ctx.rng.borrow_mut();
            let mask: Vec<f64> = (0..x.len())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            x.mul(&Tensor::constant(Matrix::new(x.rows(), x.cols(), mask)?))
        }
        _ => Ok(x),
    }
}

/// Message passing followed by batch norm, skip, activation and dropout.
#[derive(Clone, Debug)]
pub(crate) struct GnnLayer {
    pub op: Operator,
    pub bn: Option<BatchNorm>,
    pub skip: bool,
    /// Bias-free projection of the skip input when widths differ.
    pub projection: Option<Tensor>,
    pub activation: ActivationKind,
    pub dropout: Option<f64>,
}

impl GnnLayer {
    pub fn new(
        kind: OperatorKind,
        in_dim: usize,
        spec: &LayerSpec,
        order: usize,
        aggregation: Aggregation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let inner = (kind == OperatorKind::Gin).then_some(spec.activation);
        let op = Operator::new(kind, in_dim, spec.units, order, aggregation, inner, rng)?;
        let projection = (spec.skip && in_dim != spec.units)
            .then(|| Tensor::parameter(init_uniform(in_dim, spec.units, in_dim, rng)));
        Ok(Self {
            op,
            bn: spec.batch_norm.map(|b| BatchNorm::new(spec.units, b)),
            skip: spec.skip,
            projection,
            activation: spec.activation,
            dropout: spec.dropout,
        })
    }

    pub fn pre_activation(&self, x: &Tensor, graph: &Graph, ctx: &Ctx) -> Result<Tensor> {
        let mut h = self.op.forward(x, graph)?;
        if let Some(bn) = &self.bn {
            h = bn.forward(&h, ctx)?;
        }
        if self.skip {
            let residual = match &self.projection {
                Some(p) => x.matmul(p)?,
                None => x.clone(),
            };
            h = h.add(&residual)?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Tensor, graph: &Graph, ctx: &Ctx) -> Result<Tensor> {
        let h = self.pre_activation(x, graph, ctx)?.activation(self.activation);
        dropout(h, self.dropout, ctx)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.op.parameters();
        p.extend(self.projection.clone());
        p.extend(self.bn.iter().flat_map(|b| [b.gamma.clone(), b.beta.clone()]));
        p
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Tensor::parameter(init_uniform(in_dim, out_dim, in_dim, rng)),
            bias: Tensor::parameter(init_uniform(1, out_dim, in_dim, rng)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// Affine map followed by batch norm, activation and dropout.
#[derive(Clone, Debug)]
pub(crate) struct DenseLayer {
    pub linear: Linear,
    pub bn: Option<BatchNorm>,
    pub activation: ActivationKind,
    pub dropout: Option<f64>,
}

impl DenseLayer {
    pub fn new(in_dim: usize, spec: &LayerSpec, rng: &mut impl Rng) -> Self {
        Self {
            linear: Linear::new(in_dim, spec.units, rng),
            bn: spec.batch_norm.map(|b| BatchNorm::new(spec.units, b)),
            activation: spec.activation,
            dropout: spec.dropout,
        }
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let mut h = self.linear.forward(x)?;
        if let Some(bn) = &self.bn {
            h = bn.forward(&h, ctx)?;
        }
        dropout(h.activation(self.activation), self.dropout, ctx)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.linear.parameters();
        p.extend(self.bn.iter().flat_map(|b| [b.gamma.clone(), b.beta.clone()]));
        p
    }
}

pub(crate) fn gnn_stack(
    kind: OperatorKind,
    in_dim: usize,
    specs: &[LayerSpec],
    order: usize,
    aggregation: Aggregation,
    rng: &mut impl Rng,
) -> Result<Vec<GnnLayer>> {
    let mut width = in_dim;
    specs
        .iter()
        .map(|s| {
            let layer = GnnLayer::new(kind, width, s, order, aggregation, rng);
            width = s.units;
            layer
        })
        .collect()
}

pub(crate) fn dense_stack(in_dim: usize, specs: &[LayerSpec], rng: &mut impl Rng) -> Vec<DenseLayer> {
    let mut width = in_dim;
    specs
        .iter()
        .map(|s| {
            let layer = DenseLayer::new(width, s, rng);
            width = s.units;
            layer
        })
        .collect()
}

pub(crate) fn run_gnn(layers: &[GnnLayer], x: Tensor, graph: &Graph, ctx: &Ctx) -> Result<Tensor> {
    layers.iter().try_fold(x, |h, l| l.forward(&h, graph, ctx))
}

pub(crate) fn run_dense(layers: &[DenseLayer], x: Tensor, ctx: &Ctx) -> Result<Tensor> {
    layers.iter().try_fold(x, |h, l| l.forward(&h, ctx))
}
