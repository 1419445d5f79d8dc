//! Minimal deterministic SVG charts: line (with optional std band), grouped
//! bar, and scatter with fit line. Coordinates are printed with two decimals
//! so output bytes depend only on the input data.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Half-width of a shaded band around each point.
    pub band: Option<Vec<f64>>,
}

pub struct ScatterPoint {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

/// Fitted line `y = slope * x + intercept` with its R².
pub struct FitLine {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let (x0, x1) = padded_range(xs, 0.0);
        let (y0, y1) = padded_range(ys, 0.05);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn padded_range(values: impl Iterator<Item = f64>, pad: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let span = hi - lo;
    (lo - pad * span, hi + pad * span)
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: &[(f64, String)]) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        out,
        r#"<path d="M{l:.2},{t:.2} L{l:.2},{b:.2} L{r:.2},{b:.2}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let y = f.py(v);
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{l:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            l - 4.0,
            l - 6.0,
            y + 4.0
        );
    }
    for (v, label) in x_ticks {
        let x = f.px(*v);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{b:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            b + 4.0,
            b + 18.0,
            escape(label)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, labels: &[&str]) {
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 8.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            y - 10.0,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            y,
            escape(label)
        );
    }
}

fn integer_ticks(lo: f64, hi: f64) -> Vec<(f64, String)> {
    let (lo, hi) = (lo.ceil() as i64, hi.floor() as i64);
    let step = ((hi - lo) / 12).max(1);
    (lo..=hi).step_by(step as usize).map(|v| (v as f64, v.to_string())).collect()
}

/// Line chart with optional std bands. X values are expected to be layers.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| {
        s.points.iter().enumerate().flat_map(move |(i, p)| {
            let half = s.band.as_ref().map_or(0.0, |b| b[i]);
            [p.1 - half, p.1 + half]
        })
    });
    let f = Frame::new(xs.clone(), ys.collect::<Vec<_>>().into_iter());
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, x_label, y_label, &integer_ticks(f.x0, f.x1));
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(band) = &s.band {
            let mut d = String::new();
            for (j, (x, y)) in s.points.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, f.px(*x), f.py(y + band[j]));
            }
            for (j, (x, y)) in s.points.iter().enumerate().rev() {
                let _ = write!(d, "L{:.2},{:.2} ", f.px(*x), f.py(y - band[j]));
            }
            let _ = writeln!(out, r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, d);
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

/// Grouped bar chart: `values[s][c]` is series `s` in category `c`.
pub fn bar_plot(title: &str, y_label: &str, categories: &[String], series: &[String], values: &[Vec<f64>]) -> String {
    let ys = values.iter().flatten().copied().chain([0.0]);
    let mut f = Frame::new([0.0, categories.len() as f64].into_iter(), ys);
    f.y0 = f.y0.min(0.0);
    let mut out = String::new();
    header(&mut out, title);
    let ticks: Vec<(f64, String)> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (i as f64 + 0.5, c.clone()))
        .collect();
    axes(&mut out, &f, "", y_label, &ticks);
    let n = series.len().max(1) as f64;
    let slot = (f.px(1.0) - f.px(0.0)) * 0.8 / n;
    for (s, row) in values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let x = f.px(c as f64) + (f.px(1.0) - f.px(0.0)) * 0.1 + slot * s as f64;
            let (y_top, y_bot) = (f.py(v.max(0.0)), f.py(v.min(0.0)));
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y_top:.2}" width="{slot:.2}" height="{:.2}" fill="{}"/>"#,
                y_bot - y_top,
                PALETTE[s % PALETTE.len()]
            );
        }
    }
    let labels: Vec<&str> = series.iter().map(String::as_str).collect();
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

/// Scatter with labelled points and an optional fit line annotated with R².
pub fn scatter_plot(title: &str, x_label: &str, y_label: &str, points: &[ScatterPoint], fit: Option<&FitLine>) -> String {
    let f = Frame::new(points.iter().map(|p| p.x), points.iter().map(|p| p.y));
    let f = Frame {
        x0: f.x0 - 0.05 * (f.x1 - f.x0),
        x1: f.x1 + 0.05 * (f.x1 - f.x0),
        ..f
    };
    let mut out = String::new();
    header(&mut out, title);
    let ticks: Vec<(f64, String)> = (0..=4)
        .map(|i| {
            let v = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
            (v, format!("{v:.2}"))
        })
        .collect();
    axes(&mut out, &f, x_label, y_label, &ticks);
    if let Some(fit) = fit {
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
            f.px(f.x0),
            f.py(fit.slope * f.x0 + fit.intercept),
            f.px(f.x1),
            f.py(fit.slope * f.x1 + fit.intercept)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}">R² = {:.2}</text>"#,
            LEFT + 8.0,
            TOP + 14.0,
            fit.r_squared
        );
    }
    for (i, p) in points.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
            f.px(p.x),
            f.py(p.y),
            PALETTE[i % PALETTE.len()]
        );
    }
    let labels: Vec<&str> = points.iter().map(|p| p.label.as_str()).collect();
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> Vec<Series> {
        vec![Series {
            label: "Form <a&b>".into(),
            points: vec![(0.0, 0.1), (1.0, 0.5), (2.0, 0.9)],
            band: Some(vec![0.05, 0.05, 0.02]),
        }]
    }

    #[test]
    fn line_is_deterministic_and_escaped() {
        let a = line_plot("t", "layer", "perf", &series());
        assert_eq!(a, line_plot("t", "layer", "perf", &series()));
        assert!(a.contains("Form &lt;a&amp;b&gt;"));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("<polyline"));
    }

    #[test]
    fn flat_and_empty_inputs_render() {
        let flat = vec![Series { label: "c".into(), points: vec![(0.0, 1.0), (1.0, 1.0)], band: None }];
        assert!(!line_plot("t", "x", "y", &flat).contains("NaN"));
        let bars = bar_plot("b", "layer", &["Form".into()], &["m".into()], &[vec![3.0]]);
        assert!(bars.contains("<rect x="));
        let sc = scatter_plot("s", "x", "y", &[], None);
        assert!(!sc.contains("NaN"));
    }

    #[test]
    fn scatter_fit_annotation() {
        let pts = vec![
            ScatterPoint { label: "a".into(), x: 0.1, y: 0.2 },
            ScatterPoint { label: "b".into(), x: 0.5, y: 0.4 },
        ];
        let fit = FitLine { slope: 0.5, intercept: 0.15, r_squared: 1.0 };
        assert!(scatter_plot("s", "form", "meaning", &pts, Some(&fit)).contains("R² = 1.00"));
    }
}
