use std::f64::consts::PI;
use std::fmt::Write;

use crate::model::Architecture;
use crate::ops::OperatorKind;
use crate::report::table::{fmt3, GridRow};
use crate::train::PrimaryMetric;

/// Heatmap colour at 0.
pub const RAMP_LOW: [u8; 3] = [0xf7, 0xfb, 0xff];
/// Heatmap colour at 1.
pub const RAMP_HIGH: [u8; 3] = [0x08, 0x30, 0x6b];
const FAILED_FILL: &str = "#d9d9d9";

/// Linear two-stop ramp over `[0, 1]`; values outside are clamped.
pub fn ramp(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let c: Vec<u8> = (0..3)
        .map(|i| (RAMP_LOW[i] as f64 + t * (RAMP_HIGH[i] as f64 - RAMP_LOW[i] as f64)).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn lookup(rows: &[GridRow], a: Architecture, o: OperatorKind) -> Option<&GridRow> {
    rows.iter().find(|r| r.architecture == a && r.operator == o)
}

fn metric_title(metric: PrimaryMetric) -> &'static str {
    match metric {
        PrimaryMetric::Accuracy => "Accuracy",
        PrimaryMetric::WeightedF1 => "Weighted F1",
    }
}

/// Architecture rows by operator columns, coloured and labelled by `metric`.
pub fn heatmap_svg(rows: &[GridRow], metric: PrimaryMetric) -> String {
    let (cw, ch, left, top) = (90.0, 48.0, 100.0, 70.0);
    let width = left + cw * OperatorKind::ALL.len() as f64 + 20.0;
    let height = top + ch * Architecture::ALL.len() as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="28" font-size="16" text-anchor="middle" class="title">{} heatmap</text>"#,
        width / 2.0,
        metric_title(metric)
    );
    for (j, o) in OperatorKind::ALL.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="13" text-anchor="middle" class="axis">{}</text>"#,
            left + cw * (j as f64 + 0.5),
            top - 10.0,
            o.name()
        );
    }
    for (i, a) in Architecture::ALL.iter().enumerate() {
        let y = top + ch * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="13" text-anchor="end" class="axis">{}</text>"#,
            left - 10.0,
            y + ch / 2.0 + 4.0,
            a.label()
        );
        for (j, o) in OperatorKind::ALL.iter().enumerate() {
            let x = left + cw * j as f64;
            let value = lookup(rows, *a, *o).and_then(|r| r.metric(metric));
            let (fill, label, ink) = match value {
                Some(v) => (ramp(v), fmt3(v), if v > 0.5 { "#ffffff" } else { "#000000" }),
                None => (FAILED_FILL.to_string(), "failed".to_string(), "#000000"),
            };
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}" stroke="#ffffff"/>"##
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="13" text-anchor="middle" fill="{ink}" class="value" data-architecture="{}" data-operator="{}">{label}</text>"#,
                x + cw / 2.0,
                y + ch / 2.0 + 4.0,
                a.short(),
                o.name()
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One operator's `metric` across the four architectures, one spoke each,
/// on a radial scale from 0 at the centre to 1 at the rim.
pub fn radar_svg(rows: &[GridRow], operator: OperatorKind, metric: PrimaryMetric) -> String {
    let (size, r) = (360.0, 120.0);
    let c = size / 2.0;
    let n = Architecture::ALL.len();
    let angle = |k: usize| -PI / 2.0 + 2.0 * PI * k as f64 / n as f64;
    let point = |k: usize, radius: f64| (c + radius * angle(k).cos(), c + 10.0 + radius * angle(k).sin());
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" viewBox="0 0 {size} {}" font-family="sans-serif">"#,
        size + 20.0,
        size + 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{c}" y="24" font-size="16" text-anchor="middle" class="title">{} {}</text>"#,
        operator.name(),
        metric_title(metric)
    );
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let pts: Vec<String> = (0..n)
            .map(|k| {
                let (x, y) = point(k, r * ring);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(s, r##"<polygon points="{}" fill="none" stroke="#cccccc"/>"##, pts.join(" "));
    }
    let mut shape = Vec::with_capacity(n);
    for (k, a) in Architecture::ALL.iter().enumerate() {
        let (x, y) = point(k, r);
        let _ = writeln!(s, r##"<line x1="{c}" y1="{}" x2="{x:.2}" y2="{y:.2}" stroke="#999999"/>"##, c + 10.0);
        let value = lookup(rows, *a, operator).and_then(|row| row.metric(metric));
        let v = value.map_or(0.0, |v| v.clamp(0.0, 1.0));
        shape.push(point(k, r * v));
        let (lx, ly) = point(k, r + 28.0);
        let _ = writeln!(
            s,
            r#"<text x="{lx:.2}" y="{:.2}" font-size="13" text-anchor="middle" class="axis">{}</text>"#,
            ly - 4.0,
            a.label()
        );
        let _ = writeln!(
            s,
            r#"<text x="{lx:.2}" y="{:.2}" font-size="12" text-anchor="middle" class="value" data-architecture="{}" data-operator="{}">{}</text>"#,
            ly + 11.0,
            a.short(),
            operator.name(),
            value.map_or("failed".to_string(), fmt3)
        );
    }
    let pts: Vec<String> = shape.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        s,
        r##"<polygon points="{}" fill="#08306b" fill-opacity="0.25" stroke="#08306b" stroke-width="2"/>"##,
        pts.join(" ")
    );
    s.push_str("</svg>\n");
    s
}
