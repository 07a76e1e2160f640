use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::schema::BinningPolicy;

/// Fitted duration binner.
///
/// Bin ids `0..unique_values.len()` are the rule-matching durations in
/// ascending order; the following `n_quantile_bins` ids cover everything
/// else, split at `quantile_edges`. A value equal to an edge belongs to the
/// lower bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationBinner {
    pub policy: BinningPolicy,
    pub unique_values: Vec<i64>,
    pub quantile_edges: Vec<f64>,
}

impl DurationBinner {
    pub fn fit(durations: &[i64], policy: &BinningPolicy) -> Result<Self> {
        policy.validate()?;
        let mut unique_values = Vec::new();
        let mut rest = Vec::new();
        for &d in durations {
            if policy.unique_bin_rule.matches(d as f64) {
                unique_values.push(d);
            } else {
                rest.push(d as f64);
            }
        }
        unique_values.sort_unstable();
        unique_values.dedup();
        rest.sort_by(f64::total_cmp);

        let n_q = policy.n_quantile_bins;
        let m = rest.len();
        let quantile_edges = if m == 0 {
            Vec::new()
        } else {
            (1..n_q)
                .map(|q| {
                    let rank = (q * m).div_ceil(n_q).max(1);
                    rest[rank - 1]
                })
                .collect()
        };
        Ok(Self {
            policy: policy.clone(),
            unique_values,
            quantile_edges,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.unique_values.len() + self.policy.n_quantile_bins
    }

    pub fn bin(&self, minutes: i64) -> usize {
        if self.policy.unique_bin_rule.matches(minutes as f64) && !self.unique_values.is_empty() {
            return match self.unique_values.binary_search(&minutes) {
                Ok(i) => i,
                Err(i) => {
                    // unseen matching value: nearest fitted one, lower on ties
                    if i == 0 {
                        0
                    } else if i == self.unique_values.len() {
                        i - 1
                    } else {
                        let below = minutes - self.unique_values[i - 1];
                        let above = self.unique_values[i] - minutes;
                        if above < below {
                            i
                        } else {
                            i - 1
                        }
                    }
                }
            };
        }
        let d = minutes as f64;
        let q = self.quantile_edges.iter().filter(|&&e| e < d).count();
        self.unique_values.len() + q.min(self.policy.n_quantile_bins - 1)
    }

    pub fn check(&self) -> Result<()> {
        if self.quantile_edges.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::contract("quantile edges must be nondecreasing"));
        }
        Ok(())
    }
}
