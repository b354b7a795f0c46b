//! Minimal SVG line plots with a logarithmic y axis.

use std::fmt::Write;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

const PANEL_W: f64 = 440.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 44.0;
const LEGEND_H: f64 = 18.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn plottable(&(x, y): &(f64, f64)) -> bool {
    x.is_finite() && y.is_finite() && y > 0.0
}

/// Decade range covering all positive finite y values.
fn y_decades(panel: &Panel) -> (i32, i32) {
    let (lo, hi) = panel
        .series
        .iter()
        .flat_map(|s| s.points.iter().filter(|p| plottable(p)))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| {
            (lo.min(y), hi.max(y))
        });
    if !lo.is_finite() {
        return (0, 1);
    }
    let lo = lo.log10().floor() as i32;
    let hi = (hi.log10().ceil() as i32).max(lo + 1);
    (lo, hi)
}

fn x_range(panels: &[Panel]) -> (f64, f64) {
    let (lo, hi) = panels
        .iter()
        .flat_map(|p| p.series.iter())
        .flat_map(|s| s.points.iter().filter(|p| plottable(p)))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, _)| {
            (lo.min(x), hi.max(x))
        });
    if !lo.is_finite() || hi <= lo {
        return (0.0, 1.0);
    }
    (lo, hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders panels side by side. Nonpositive or non-finite points are
/// skipped and break the line.
pub fn render_svg(title: &str, panels: &[Panel]) -> String {
    let n_series = panels.iter().map(|p| p.series.len()).max().unwrap_or(0);
    let width = PANEL_W * panels.len().max(1) as f64;
    let height = PANEL_H + LEGEND_H * n_series as f64 + 8.0;
    let (x_lo, x_hi) = x_range(panels);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );

    for (k, panel) in panels.iter().enumerate() {
        let ox = PANEL_W * k as f64;
        let left = ox + MARGIN_L;
        let right = ox + PANEL_W - MARGIN_R;
        let top = MARGIN_T;
        let bottom = PANEL_H - MARGIN_B;
        let (d_lo, d_hi) = y_decades(panel);
        let sx = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * (right - left);
        let sy = |y: f64| bottom - (y.log10() - d_lo as f64) / (d_hi - d_lo) as f64 * (bottom - top);

        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            (left + right) / 2.0,
            top - 10.0,
            escape(&panel.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            right - left,
            bottom - top
        );
        let step = ((d_hi - d_lo) as f64 / 8.0).ceil().max(1.0) as i32;
        let mut d = d_lo;
        while d <= d_hi {
            let y = sy(10f64.powi(d));
            let _ = writeln!(
                svg,
                r##"<line x1="{left}" y1="{y:.2}" x2="{right}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"##,
                left - 4.0,
                y + 4.0
            );
            d += step;
        }
        for i in 0..=4 {
            let xv = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                sx(xv),
                bottom + 14.0,
                xv.round()
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">T</text>"#,
            (left + right) / 2.0,
            bottom + 30.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" transform="rotate(-90 {} {})">{}</text>"#,
            ox + 14.0,
            (top + bottom) / 2.0,
            ox + 14.0,
            (top + bottom) / 2.0,
            escape(&panel.y_label)
        );

        for (j, series) in panel.series.iter().enumerate() {
            let color = PALETTE[j % PALETTE.len()];
            let mut segment: Vec<String> = Vec::new();
            let flush = |segment: &mut Vec<String>, svg: &mut String| {
                if segment.len() >= 2 {
                    let _ = writeln!(
                        svg,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                        segment.join(" ")
                    );
                } else if let Some(pt) = segment.first() {
                    let (cx, cy) = pt.split_once(',').unwrap_or(("0", "0"));
                    let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="1.5" fill="{color}"/>"#);
                }
                segment.clear();
            };
            for pt in &series.points {
                if plottable(pt) {
                    segment.push(format!("{:.2},{:.2}", sx(pt.0), sy(pt.1)));
                } else {
                    flush(&mut segment, &mut svg);
                }
            }
            flush(&mut segment, &mut svg);

            let ly = PANEL_H + LEGEND_H * j as f64;
            let _ = writeln!(
                svg,
                r#"<line x1="{left}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                left + 20.0,
                left + 26.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
