//! Static SVG line charts for metric CSVs.

use std::fmt::Write;

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 56.0;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn label(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// One stacked panel per series, sharing the x label.
pub fn line_chart(title: &str, x_label: &str, series: &[Series]) -> String {
    let height = MARGIN + series.len() as f64 * (PANEL_H + MARGIN);
    let width = PANEL_W + 2.0 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, width / 2.0, escape(title));
    for (i, s) in series.iter().enumerate() {
        let top = MARGIN + i as f64 * (PANEL_H + MARGIN);
        let (x0, x1) = span(s.points.iter().map(|p| p.0));
        let (y0, y1) = span(s.points.iter().map(|p| p.1));
        let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * PANEL_W;
        let py = |y: f64| top + PANEL_H - (y - y0) / (y1 - y0) * PANEL_H;
        let _ = writeln!(svg, r##"<rect x="{MARGIN}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/>"##);
        let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{}">{}</text>"#, top - 6.0, escape(&s.name));
        for (v, y) in [(y1, top + 4.0), (y0, top + PANEL_H)] {
            let _ = writeln!(svg, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, MARGIN - 4.0, label(v));
        }
        let bottom = top + PANEL_H + 16.0;
        let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{bottom}">{}</text>"#, label(x0));
        let _ = writeln!(svg, r#"<text x="{}" y="{bottom}" text-anchor="end">{}</text>"#, MARGIN + PANEL_W, label(x1));
        let _ = writeln!(svg, r#"<text x="{}" y="{bottom}" text-anchor="middle">{}</text>"#, MARGIN + PANEL_W / 2.0, escape(x_label));
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(svg, r##"<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##, pts.join(" "));
        for &(x, y) in &s.points {
            let _ = writeln!(svg, r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#1f77b4"/>"##, px(x), py(y));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
