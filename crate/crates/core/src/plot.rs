//! Minimal hand-written SVG charts. The CSV files next to them hold the
//! actual numbers.

use std::fmt::Write as _;

use crate::grid::{CellIndex, ScalarField};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
}

/// Line chart of one or more series against their index.
pub fn line_chart(title: &str, x_label: &str, series: &[(&str, Vec<f64>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let mut out = String::new();
    open(&mut out, w, h, title);

    let finite = || series.iter().flat_map(|(_, v)| v.iter().copied().filter(|x| x.is_finite()));
    let lo = finite().fold(f64::INFINITY, f64::min);
    let hi = finite().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() {
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    } else {
        (0.0, 1.0)
    };
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(2);
    let px = |i: usize| left + (w - left - right) * i as f64 / (n - 1) as f64;
    let py = |v: f64| top + (h - top - bottom) * (hi - v) / (hi - lo);

    let _ = writeln!(
        out,
        r##"<path d="M{left} {top} V{:.1} H{:.1}" fill="none" stroke="#333"/>"##,
        h - bottom,
        w - right
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            py(v) + 4.0,
            format_tick(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (left + w - right) / 2.0,
        h - 12.0,
        escape(x_label)
    );

    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        let mut pen_up = true;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                pen_up = true;
                continue;
            }
            let _ = write!(d, "{}{:.1} {:.1} ", if pen_up { "M" } else { "L" }, px(i), py(v));
            pen_up = false;
        }
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            left + 10.0,
            top + 14.0 * (k + 1) as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn format_tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e5) {
        format!("{v:.2}")
    } else {
        format!("{v:.1e}")
    }
}

/// Cell colour from green (0) through yellow to dark red (500).
fn aqi_color(v: f64) -> String {
    let t = (v / crate::AQI_MAX).clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let s = t / 0.5;
        (40.0 + 215.0 * s, 170.0 + 50.0 * s, 60.0 - 20.0 * s)
    } else {
        let s = (t - 0.5) / 0.5;
        (255.0 - 115.0 * s, 220.0 - 220.0 * s, 40.0 - 10.0 * s)
    };
    format!("rgb({},{},{})", r.round(), g.round(), b.round())
}

/// Heatmap of an AQI field with booth markers. Row 0 (the southern edge)
/// is drawn at the bottom.
pub fn heatmap(title: &str, field: &ScalarField, booths: &[CellIndex]) -> String {
    let spec = field.spec();
    let cell = (560.0 / spec.width.max(spec.height) as f64).max(2.0);
    let (left, top) = (20.0, 40.0);
    let w = left * 2.0 + cell * spec.width as f64;
    let h = top + 20.0 + cell * spec.height as f64;
    let mut out = String::new();
    open(&mut out, w, h, title);
    for c in spec.cells() {
        let x = left + c.y as f64 * cell;
        let y = top + (spec.height - 1 - c.x) as f64 * cell;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{cell:.1}" height="{cell:.1}" fill="{}"/>"#,
            aqi_color(field.get(c))
        );
    }
    for b in booths {
        let x = left + (b.y as f64 + 0.5) * cell;
        let y = top + (spec.height - 1 - b.x) as f64 * cell + cell / 2.0;
        let _ = writeln!(
            out,
            r##"<circle cx="{x:.1}" cy="{y:.1}" r="{:.1}" fill="#1f77b4" stroke="white"/>"##,
            (cell * 0.35).max(1.5)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Radar chart of values already scaled to [0, 1].
pub fn radar(title: &str, axes: &[&str], rows: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (640.0, 560.0);
    let (cx, cy, r) = (320.0, 300.0, 200.0);
    let mut out = String::new();
    open(&mut out, w, h, title);
    let n = axes.len().max(1);
    let point = |i: usize, v: f64| {
        let a = std::f64::consts::TAU * i as f64 / n as f64 - std::f64::consts::FRAC_PI_2;
        (cx + r * v * a.cos(), cy + r * v * a.sin())
    };
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let pts: Vec<String> = (0..n)
            .map(|i| {
                let (x, y) = point(i, ring);
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let _ = writeln!(out, r##"<polygon points="{}" fill="none" stroke="#ccc"/>"##, pts.join(" "));
    }
    for (i, name) in axes.iter().enumerate() {
        let (x, y) = point(i, 1.0);
        let (lx, ly) = point(i, 1.12);
        let _ = writeln!(out, r##"<line x1="{cx}" y1="{cy}" x2="{x:.1}" y2="{y:.1}" stroke="#ccc"/>"##);
        let _ = writeln!(
            out,
            r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="middle" font-size="10">{}</text>"#,
            escape(name)
        );
    }
    for (k, (name, values)) in rows.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (x, y) = point(i, v.clamp(0.0, 1.0));
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="20" y="{:.1}" fill="{color}">{}</text>"#,
            h - 20.0 - 16.0 * (rows.len() - 1 - k) as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
