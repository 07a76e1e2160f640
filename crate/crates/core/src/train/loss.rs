use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cross_entropy_row, multi_margin_row, Matrix, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    MultiMargin,
}

impl LossKind {
    pub const ALL: [LossKind; 2] = [LossKind::CrossEntropy, LossKind::MultiMargin];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::MultiMargin => "multi_margin",
        }
    }

    /// Mean loss over the batch as a differentiable scalar.
    pub fn apply(self, logits: &Tensor, labels: Rc<[usize]>) -> Result<Tensor> {
        match self {
            LossKind::CrossEntropy => logits.cross_entropy(labels),
            LossKind::MultiMargin => logits.multi_margin(labels),
        }
    }

    /// Loss of every row.
    pub fn per_sample(self, logits: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
        if logits.rows() != labels.len() {
            return Err(Error::contract(format!("{} logit rows for {} labels", logits.rows(), labels.len())));
        }
        labels
            .iter()
            .enumerate()
            .map(|(r, &y)| {
                if y >= logits.cols() {
                    return Err(Error::contract(format!("label {y} out of range for {} classes", logits.cols())));
                }
                let row = logits.row(r);
                Ok(match self {
                    LossKind::CrossEntropy => cross_entropy_row(row, y),
                    LossKind::MultiMargin => multi_margin_row(row, y),
                })
            })
            .collect()
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::config(format!("unknown loss '{s}'")))
    }
}
