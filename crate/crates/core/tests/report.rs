use std::collections::BTreeMap;

use hgnn_core::hpo::{RankingPolicy, StudyConfig};
use hgnn_core::ingest::{generate_synthetic_log, EncodedDataset, SplitOptions, SyntheticSpec};
use hgnn_core::model::Architecture;
use hgnn_core::ops::OperatorKind;
use hgnn_core::report::{
    fmt3, grid_pairs, heatmap_svg, load_config, radar_svg, ramp, ranking_table, read_grid_csv, run_grid, write_grid_csv,
    write_grid_outputs, GridRow, GRID_COLUMNS,
};
use hgnn_core::train::PrimaryMetric;

/// `(architecture, operator, text)` of every value label in an SVG.
fn value_labels(svg: &str) -> Vec<(String, String, String)> {
    svg.lines()
        .filter(|l| l.contains(r#"class="value""#))
        .map(|l| {
            let attr = |name: &str| {
                let key = format!(r#"{name}=""#);
                let start = l.find(&key).unwrap() + key.len();
                l[start..start + l[start..].find('"').unwrap()].to_string()
            };
            let text = l[l.find('>').unwrap() + 1..l.rfind("</text>").unwrap()].to_string();
            (attr("data-architecture"), attr("data-operator"), text)
        })
        .collect()
}

fn other_texts(svg: &str) -> Vec<String> {
    svg.lines()
        .filter(|l| l.starts_with("<text") && !l.contains(r#"class="value""#))
        .map(|l| l[l.find('>').unwrap() + 1..l.rfind("</text>").unwrap()].to_string())
        .collect()
}

fn sample_rows() -> Vec<GridRow> {
    grid_pairs()
        .into_iter()
        .enumerate()
        .map(|(i, (a, o))| GridRow {
            architecture: a,
            operator: o,
            values: (i != 7).then(|| {
                let x = i as f64 / 30.0;
                [0.5 + x, 0.4 + x, 1.0 - x, 0.1 + x / 10.0].map(|v| fmt3(v).parse().unwrap())
            }),
        })
        .collect()
}

#[test]
fn ramp_endpoints_and_clamping() {
    assert_eq!(ramp(0.0), "#f7fbff");
    assert_eq!(ramp(1.0), "#08306b");
    assert_eq!(ramp(-3.0), ramp(0.0));
    assert_eq!(ramp(7.0), ramp(1.0));
    assert_eq!(ramp(0.5), "#8096b5");
}

#[test]
fn csv_round_trip_keeps_failed_cells_empty() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.csv");
    let rows = sample_rows();
    write_grid_csv(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 25);
    assert_eq!(lines[0], GRID_COLUMNS.join(","));
    assert_eq!(lines[8], "two,graph,,,,");
    assert_eq!(read_grid_csv(&path).unwrap(), rows);
}

#[test]
fn csv_with_wrong_columns_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.csv");
    std::fs::write(&path, "architecture,operator,accuracy\none,gcn,0.5\n").unwrap();
    assert!(read_grid_csv(&path).is_err());
}

#[test]
fn figure_values_match_csv_text() {
    let rows = sample_rows();
    for metric in [PrimaryMetric::Accuracy, PrimaryMetric::WeightedF1] {
        let col = if metric == PrimaryMetric::Accuracy { 2 } else { 3 };
        let expected: BTreeMap<(String, String), String> = rows
            .iter()
            .map(|r| {
                let cells = r.cells();
                let text = if cells[col].is_empty() { "failed".to_string() } else { cells[col].clone() };
                ((cells[0].clone(), cells[1].clone()), text)
            })
            .collect();
        let heat = heatmap_svg(&rows, metric);
        let labels = value_labels(&heat);
        assert_eq!(labels.len(), 24);
        for (a, o, t) in labels {
            assert_eq!(expected[&(a, o)], t);
        }
        assert!(other_texts(&heat).iter().all(|t| !t.contains('.')));
        for op in OperatorKind::ALL {
            let radar = radar_svg(&rows, op, metric);
            let labels = value_labels(&radar);
            assert_eq!(labels.len(), 4);
            for (a, o, t) in labels {
                assert_eq!(o, op.name());
                assert_eq!(expected[&(a, o)], t);
            }
            assert!(other_texts(&radar).iter().all(|t| !t.contains('.')));
        }
    }
}

#[test]
fn heatmap_colours_follow_the_metric() {
    let mut rows = sample_rows();
    rows[0].values = Some([1.0, 0.0, 0.0, 0.0]);
    let heat = heatmap_svg(&rows, PrimaryMetric::Accuracy);
    assert!(heat.contains(r##"fill="#08306b""##));
    let heat = heatmap_svg(&rows, PrimaryMetric::WeightedF1);
    assert!(heat.contains(r##"fill="#f7fbff""##));
    assert!(heat.contains(r##"fill="#d9d9d9""##));
}

#[test]
fn ranking_table_lists_completed_cells_best_first() {
    let rows = sample_rows();
    let table = ranking_table(&rows, RankingPolicy::Balanced);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 23);
    assert!(lines[1].starts_with("1    TE-GNN   gin"), "{}", lines[1]);
}

#[test]
fn tiny_grid_fills_every_cell_and_writes_outputs() {
    let log = generate_synthetic_log(&SyntheticSpec {
        n_cases: 40,
        seed: 4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let data = EncodedDataset::build(&log.traces, &log.schema, &SplitOptions::default()).unwrap();
    let mut base = StudyConfig::new(Architecture::OneLevel, OperatorKind::Gcn);
    base.n_trials = 1;
    base.max_epochs = 2;
    base.seed = 3;
    let dir = tempfile::tempdir().unwrap();
    let report = run_grid(&base, &data, Some(dir.path()), 4, false).unwrap();
    assert_eq!(report.cells.len(), 24);
    assert_eq!(report.n_completed(), 24);
    let rows = write_grid_outputs(&report, dir.path()).unwrap();
    assert_eq!(read_grid_csv(&dir.path().join("grid.csv")).unwrap(), rows);
    let figures = std::fs::read_dir(dir.path().join("figures")).unwrap().count();
    assert_eq!(figures, 7);
    for cell in &report.cells {
        let config = load_config(&dir.path().join(cell.config_path.as_ref().unwrap())).unwrap();
        assert_eq!((config.architecture, config.operator), (cell.architecture, cell.operator));
        let ledger = dir
            .path()
            .join("trials")
            .join(format!("{}_{}.jsonl", cell.architecture.short(), cell.operator.name()));
        assert_eq!(std::fs::read_to_string(ledger).unwrap().lines().count(), 1);
    }
}
