use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::ops::OperatorKind;
use crate::train::{MetricsReport, PrimaryMetric};

/// Which metric decides between models: accuracy for balanced labels,
/// weighted F1 for imbalanced ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingPolicy {
    #[default]
    Balanced,
    Imbalanced,
}

impl RankingPolicy {
    pub fn metric(self) -> PrimaryMetric {
        match self {
            RankingPolicy::Balanced => PrimaryMetric::Accuracy,
            RankingPolicy::Imbalanced => PrimaryMetric::WeightedF1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RankingPolicy::Balanced => "balanced",
            RankingPolicy::Imbalanced => "imbalanced",
        }
    }

    /// Orders better results first: primary metric descending, then mean
    /// loss and loss spread ascending.
    pub fn compare(self, a: &MetricsReport, b: &MetricsReport) -> Ordering {
        let m = self.metric();
        m.of(b)
            .total_cmp(&m.of(a))
            .then(a.mean_loss.total_cmp(&b.mean_loss))
            .then(a.loss_std.total_cmp(&b.loss_std))
    }
}

impl fmt::Display for RankingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RankingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(RankingPolicy::Balanced),
            "imbalanced" => Ok(RankingPolicy::Imbalanced),
            _ => Err(Error::config(format!("unknown policy '{s}'"))),
        }
    }
}

/// Sorts model results best first. Exact ties fall back to the
/// architecture and operator names.
pub fn rank_models(
    results: &[(Architecture, OperatorKind, MetricsReport)],
    policy: RankingPolicy,
) -> Vec<(Architecture, OperatorKind, MetricsReport)> {
    let mut out = results.to_vec();
    out.sort_by(|a, b| {
        policy
            .compare(&a.2, &b.2)
            .then_with(|| a.0.name().cmp(b.0.name()))
            .then_with(|| a.1.name().cmp(b.1.name()))
    });
    out
}
