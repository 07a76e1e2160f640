//! The architecture × operator grid, its CSV table and SVG figures.

mod figures;
mod grid;
mod table;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::ops::OperatorKind;
use crate::train::PrimaryMetric;

pub use figures::{heatmap_svg, radar_svg, ramp, RAMP_HIGH, RAMP_LOW};
pub use grid::{
    cell_stem, grid_pairs, load_config, per_cell_trials, run_grid, write_study_artifacts, GridCell, GridReport,
};
pub use table::{fmt3, grid_rows, ranking_table, read_grid_csv, write_grid_csv, GridRow, GRID_COLUMNS};

/// Writes the heatmap and one radar per operator into `dir`; returns the
/// files written.
pub fn write_figures(rows: &[GridRow], metric: PrimaryMetric, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let heatmap = dir.join("heatmap.svg");
    fs::write(&heatmap, heatmap_svg(rows, metric))?;
    written.push(heatmap);
    for op in OperatorKind::ALL {
        let path = dir.join(format!("radar_{}.svg", op.name()));
        fs::write(&path, radar_svg(rows, op, metric))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `grid.csv`, `grid.json` and the figures for a finished grid.
pub fn write_grid_outputs(report: &GridReport, dir: &Path) -> Result<Vec<GridRow>> {
    fs::create_dir_all(dir)?;
    let rows = grid_rows(report);
    write_grid_csv(&rows, &dir.join("grid.csv"))?;
    fs::write(dir.join("grid.json"), serde_json::to_string_pretty(report)? + "\n")?;
    write_figures(&rows, report.policy.metric(), &dir.join("figures"))?;
    Ok(rows)
}
