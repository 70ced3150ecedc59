//! Minimal static SVG line charts. Output depends only on the input data.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub(crate) struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub dashed: bool,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Renders the series into one chart. With `log_y`, non-positive values are
/// dropped and the axis shows log10.
pub(crate) fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let tf = |y: f64| if log_y { if y > 0.0 { y.log10() } else { f64::NAN } } else { y };
    let ys: Vec<Vec<f64>> = series.iter().map(|s| s.y.iter().map(|&y| tf(y)).collect()).collect();
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.x.iter()));
    let (y0, y1) = bounds(ys.iter().flatten());
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let ylab = if log_y { format!("1e{yv:.1}") } else { format!("{yv:.3}") };
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#, px(xv), H - BOTTOM + 16.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{ylab}</text>"#, LEFT - 6.0, py(yv) + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, esc(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        esc(y_label)
    );
    for (k, (s, y)) in series.iter().zip(&ys).enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = String::new();
        let mut pen_up = true;
        for (&x, &yv) in s.x.iter().zip(y) {
            if !(x.is_finite() && yv.is_finite()) {
                pen_up = true;
                continue;
            }
            let _ = write!(d, "{}{:.2},{:.2} ", if pen_up { "M" } else { "L" }, px(x), py(yv));
            pen_up = false;
        }
        let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, d.trim_end());
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{color}" stroke-width="2"{dash}/><text x="{3}" y="{4}">{5}</text>"#,
            W - RIGHT - 120.0,
            ly - 4.0,
            W - RIGHT - 100.0,
            W - RIGHT - 95.0,
            ly,
            esc(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}
