use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub mean_loss: f64,
    /// Population standard deviation of the per-sample losses.
    pub loss_std: f64,
    pub per_class_f1: Vec<f64>,
}

/// Metrics from predicted and true class indices plus per-sample losses.
/// F1 of a class with no predictions and no support is 0.
pub fn compute_metrics(predicted: &[usize], labels: &[usize], losses: &[f64], n_classes: usize) -> Result<MetricsReport> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::contract("cannot evaluate on an empty set"));
    }
    if predicted.len() != n || losses.len() != n {
        return Err(Error::contract("predictions, labels and losses differ in length"));
    }
    let mut tp = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    for (&p, &y) in predicted.iter().zip(labels) {
        if p >= n_classes || y >= n_classes {
            return Err(Error::contract(format!("class index out of range for {n_classes} classes")));
        }
        pred_count[p] += 1;
        support[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..n_classes)
        .map(|c| {
            let denom = pred_count[c] + support[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    let weighted_f1 = per_class_f1
        .iter()
        .zip(&support)
        .map(|(f, &s)| f * s as f64 / n as f64)
        .sum();
    let accuracy = tp.iter().sum::<usize>() as f64 / n as f64;
    let mean_loss = losses.iter().sum::<f64>() / n as f64;
    let loss_std = (losses.iter().map(|l| (l - mean_loss).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(MetricsReport {
        accuracy,
        weighted_f1,
        mean_loss,
        loss_std,
        per_class_f1,
    })
}

/// Index of the largest entry, first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
