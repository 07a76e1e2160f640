use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpo::RankingPolicy;
use crate::model::Architecture;
use crate::ops::OperatorKind;
use crate::report::grid::{grid_pairs, GridReport};
use crate::train::PrimaryMetric;

pub const GRID_COLUMNS: [&str; 6] = ["architecture", "operator", "accuracy", "weighted_f1", "mean_loss", "loss_std"];

/// Three-decimal rendering shared by the CSV and every figure.
pub fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

/// One grid cell's scalars as printed (rounded to three decimals).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub architecture: Architecture,
    pub operator: OperatorKind,
    /// `[accuracy, weighted_f1, mean_loss, loss_std]`; `None` for a failed cell.
    pub values: Option<[f64; 4]>,
}

impl GridRow {
    pub fn metric(&self, metric: PrimaryMetric) -> Option<f64> {
        self.values.map(|v| match metric {
            PrimaryMetric::Accuracy => v[0],
            PrimaryMetric::WeightedF1 => v[1],
        })
    }

    pub fn cells(&self) -> Vec<String> {
        let mut out = vec![self.architecture.short().to_string(), self.operator.name().to_string()];
        match self.values {
            Some(v) => out.extend(v.iter().map(|&x| fmt3(x))),
            None => out.extend(std::iter::repeat_n(String::new(), 4)),
        }
        out
    }
}

/// Rows in grid order, values rounded exactly as the CSV prints them.
pub fn grid_rows(report: &GridReport) -> Vec<GridRow> {
    let round = |x: f64| fmt3(x).parse::<f64>().unwrap_or(x);
    grid_pairs()
        .into_iter()
        .map(|(a, o)| GridRow {
            architecture: a,
            operator: o,
            values: report
                .cell(a, o)
                .and_then(|c| c.metrics.as_ref())
                .map(|m| [m.accuracy, m.weighted_f1, m.mean_loss, m.loss_std].map(round)),
        })
        .collect()
}

pub fn write_grid_csv(rows: &[GridRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(GRID_COLUMNS)?;
    for row in rows {
        w.write_record(row.cells())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<GridRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if headers != GRID_COLUMNS {
        return Err(Error::Schema(format!("grid CSV columns {headers:?}, expected {GRID_COLUMNS:?}")));
    }
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let bad = |message: String| Error::Row { line, message };
        let architecture: Architecture = record[0].parse().map_err(|e: Error| bad(e.to_string()))?;
        let operator: OperatorKind = record[1].parse().map_err(|e: Error| bad(e.to_string()))?;
        let values = if record.iter().skip(2).all(str::is_empty) {
            None
        } else {
            let mut v = [0.0; 4];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = record[k + 2]
                    .parse()
                    .map_err(|_| bad(format!("{} is not a number", GRID_COLUMNS[k + 2])))?;
            }
            Some(v)
        };
        rows.push(GridRow {
            architecture,
            operator,
            values,
        });
    }
    Ok(rows)
}

/// Completed rows best first under `policy`, as a plain-text table.
pub fn ranking_table(rows: &[GridRow], policy: RankingPolicy) -> String {
    let results: Vec<_> = rows
        .iter()
        .filter_map(|r| {
            r.values.map(|v| {
                (
                    r.architecture,
                    r.operator,
                    crate::train::MetricsReport {
                        accuracy: v[0],
                        weighted_f1: v[1],
                        mean_loss: v[2],
                        loss_std: v[3],
                        per_class_f1: Vec::new(),
                    },
                )
            })
        })
        .collect();
    let mut out = format!("{:<4} {:<8} {:<6} {:>8} {:>11} {:>9} {:>8}\n", "rank", "arch", "op", "accuracy", "weighted_f1", "mean_loss", "loss_std");
    for (i, (a, o, m)) in crate::hpo::rank_models(&results, policy).iter().enumerate() {
        out += &format!(
            "{:<4} {:<8} {:<6} {:>8} {:>11} {:>9} {:>8}\n",
            i + 1,
            a.label(),
            o.name(),
            fmt3(m.accuracy),
            fmt3(m.weighted_f1),
            fmt3(m.mean_loss),
            fmt3(m.loss_std)
        );
    }
    out
}
