//! Static SVG line charts of layer sweeps.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use repstat_core::report::{SweepKind, SweepReport};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 220.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Error)]
pub enum SvgError {
    #[error("report has no rows to plot")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders one polyline per series with the layer index on the x axis.
pub fn render_svg(report: &SweepReport) -> Result<String, SvgError> {
    let series = report.series();
    if series.is_empty() {
        return Err(SvgError::Empty);
    }
    let layers = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x_min, x_max) = layers.fold((usize::MAX, 0), |(lo, hi), l| (lo.min(l), hi.max(l)));
    let values = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (mut y_min, mut y_max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if y_max - y_min < 1e-9 {
        y_min -= 0.05;
        y_max += 0.05;
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_min, y_max) = (y_min - pad, y_max + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x_span = (x_max - x_min).max(1) as f64;
    let px = |layer: usize| LEFT + (layer - x_min) as f64 / x_span * plot_w;
    let py = |v: f64| TOP + (y_max - v) / (y_max - y_min) * plot_h;
    let y_label = match report.kind {
        SweepKind::Cka => "CKA",
        SweepKind::AvgU => "AvgU",
    };

    let mut s = String::new();
    writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="black"/>"#
    )
    .unwrap();

    let step = (x_max - x_min).div_ceil(12).max(1);
    for layer in (x_min..=x_max).step_by(step) {
        let x = px(layer);
        let y0 = TOP + plot_h;
        writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{layer}</text>"#,
            y0 + 5.0,
            y0 + 18.0
        )
        .unwrap();
    }
    for k in 0..=5 {
        let v = y_min + (y_max - y_min) * k as f64 / 5.0;
        let y = py(v);
        writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            LEFT - 5.0,
            LEFT + plot_w,
            LEFT - 8.0,
            y + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">layer</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{y_label}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    )
    .unwrap();

    for (i, series) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = series
            .points
            .iter()
            .map(|&(l, v)| format!("{:.2},{:.2}", px(l), py(v)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 15.0;
        writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(&series.name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg(report: &SweepReport, path: &Path) -> Result<(), SvgError> {
    let text = render_svg(report)?;
    std::fs::write(path, text).map_err(|source| SvgError::Io {
        path: path.display().to_string(),
        source,
    })
}
