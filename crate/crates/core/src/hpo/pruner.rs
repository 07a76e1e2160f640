use serde::{Deserialize, Serialize};

/// Stops a trial whose intermediate value falls strictly below the median
/// of its peers at the same epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedianPruner {
    /// First epoch at which pruning may apply.
    pub warmup_epochs: usize,
    /// Peers with a value at the epoch needed before pruning applies.
    pub min_trials: usize,
}

impl Default for MedianPruner {
    fn default() -> Self {
        Self {
            warmup_epochs: 5,
            min_trials: 10,
        }
    }
}

impl MedianPruner {
    /// `epoch` is 1-based; `peers` holds other trials' values at that epoch.
    pub fn should_prune(&self, epoch: usize, value: f64, peers: &[f64]) -> bool {
        if epoch < self.warmup_epochs || peers.len() < self.min_trials.max(1) {
            return false;
        }
        median(peers).is_some_and(|m| value < m)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}
