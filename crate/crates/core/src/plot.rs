//! Minimal self-contained SVG charts for reports.
//!
//! Output is deterministic for identical inputs so reports diff cleanly.

use std::fmt::Write;

use crate::stats::Histogram;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 52.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = span(xs);
        let (y0, y1) = span(ys);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (bx, by) = (MARGIN_L, HEIGHT - MARGIN_B);
    let _ = writeln!(
        s,
        r#"<path d="M{bx} {MARGIN_T} L{bx} {by} L{} {by}" stroke="black" fill="none"/>"#,
        WIDTH - MARGIN_R
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x0 + t * (f.x1 - f.x0);
        let yv = f.y0 + t * (f.y1 - f.y0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, f.px(xv), by + 16.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, bx - 6.0, f.py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        HEIGHT / 2.0,
        escape(ylabel)
    );
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(s: &mut String, labels: &[&str]) {
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN_T + 8.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN_R - 150.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#, y - 9.0, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, escape(label));
    }
}

fn polyline(points: &[(f64, f64)], f: &Frame, colour: &str, dashed: bool) -> String {
    let pts: Vec<String> = points
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
        .collect();
    let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
    format!(r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"{dash}/>"#, pts.join(" "))
}

/// Overlaid density histograms, optionally with a Gaussian curve per series.
/// Label, histogram and an optional fitted `(mu, sigma)` overlay.
pub type HistogramSeries<'a> = (&'a str, &'a Histogram, Option<(f64, f64)>);

/// Label and `(x, y, y_err)` points.
pub type CurveSeries<'a> = (&'a str, Vec<(f64, f64, f64)>);

pub fn histogram_svg(title: &str, xlabel: &str, series: &[HistogramSeries<'_>]) -> String {
    let xs = series.iter().flat_map(|(_, h, _)| h.edges.iter().copied());
    let ys = series
        .iter()
        .flat_map(|(_, h, _)| h.density.iter().copied())
        .chain(std::iter::once(0.0));
    let mut f = Frame::fit(xs.clone(), ys.clone().collect::<Vec<_>>().into_iter());
    f.y0 = 0.0;
    let mut s = open(title, xlabel, "density", &f);
    for (i, (_, h, gauss)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        for (k, d) in h.density.iter().enumerate() {
            let (xa, xb) = (f.px(h.edges[k]), f.px(h.edges[k + 1]));
            let top = f.py(*d);
            let _ = writeln!(
                s,
                r#"<rect x="{xa:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{colour}" fill-opacity="0.35" stroke="{colour}"/>"#,
                (xb - xa).max(0.0),
                (f.py(0.0) - top).max(0.0)
            );
        }
        if let Some((mu, sigma)) = gauss {
            let (a, b) = (h.edges[0], h.edges[h.edges.len() - 1]);
            let curve: Vec<(f64, f64)> = (0..=200)
                .map(|i| {
                    let x = a + (b - a) * i as f64 / 200.0;
                    let z = (x - mu) / sigma;
                    (x, (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt()))
                })
                .collect();
            s.push_str(&polyline(&curve, &f, colour, true));
            s.push('\n');
        }
    }
    legend(&mut s, &series.iter().map(|x| x.0).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Scatter plot with an optional fitted line `y = slope x + intercept`.
pub fn scatter_svg(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)], line: Option<(f64, f64)>) -> String {
    let f = Frame::fit(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut s = open(title, xlabel, ylabel, &f);
    for &(x, y) in points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.5"/>"#, f.px(x), f.py(y), PALETTE[0]);
    }
    if let Some((slope, intercept)) = line {
        let ends = [(f.x0, slope * f.x0 + intercept), (f.x1, slope * f.x1 + intercept)];
        s.push_str(&polyline(&ends, &f, PALETTE[1], false));
        s.push('\n');
    }
    s.push_str("</svg>\n");
    s
}

/// One or more curves; each point may carry a symmetric error bar.
pub fn curve_svg(title: &str, xlabel: &str, ylabel: &str, series: &[CurveSeries<'_>]) -> String {
    let xs: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|(_, p)| p.iter().flat_map(|q| [q.1 - q.2, q.1 + q.2]))
        .collect();
    let f = Frame::fit(xs.into_iter(), ys.into_iter());
    let mut s = open(title, xlabel, ylabel, &f);
    for (i, (_, pts)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let line: Vec<(f64, f64)> = pts.iter().map(|q| (q.0, q.1)).collect();
        s.push_str(&polyline(&line, &f, colour, false));
        s.push('\n');
        for &(x, y, e) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, f.px(x), f.py(y));
            if e > 0.0 {
                let _ = writeln!(
                    s,
                    r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{colour}"/>"#,
                    f.px(x),
                    f.py(y - e),
                    f.py(y + e)
                );
            }
        }
    }
    legend(&mut s, &series.iter().map(|x| x.0).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}
