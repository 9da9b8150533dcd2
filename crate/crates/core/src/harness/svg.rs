//! Minimal SVG plots: line, stem and marker series on linear or log axes.

use std::fmt::Write as _;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeriesKind {
    Line,
    Stem,
    Markers,
    /// Line with vertical error bars; `errors` holds the half-heights.
    ErrorBars,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub kind: SeriesKind,
    pub points: Vec<(f64, f64)>,
    pub errors: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, kind: SeriesKind, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            kind,
            points,
            errors: Vec::new(),
        }
    }

    pub fn with_errors(mut self, errors: Vec<f64>) -> Self {
        self.errors = errors;
        self
    }
}

#[derive(Clone, Debug, Default)]
pub struct Panel {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

impl Panel {
    pub fn new(title: impl Into<String>, xlabel: impl Into<String>, ylabel: impl Into<String>) -> Self {
        Panel {
            title: title.into(),
            xlabel: xlabel.into(),
            ylabel: ylabel.into(),
            ..Default::default()
        }
    }

    pub fn push(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool, include_zero: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if include_zero && !log {
            lo = lo.min(0.0);
            hi = hi.max(0.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Axis {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.max(1e-300).log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            return (a..=b).map(|e| (10f64.powi(e), format!("1e{e}"))).collect();
        }
        let raw = (self.hi - self.lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|f| f * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + 1e-9 * step {
            let v = if t.abs() < 1e-9 * step { 0.0 } else { t };
            out.push((v, format!("{}", (v * 1e6).round() / 1e6)));
            t += step;
        }
        out
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render panels side by side.
pub fn render(panels: &[Panel], panel_w: f64, panel_h: f64) -> String {
    let (ml, mr, mt, mb) = (60.0, 15.0, 30.0, 45.0);
    let width = panel_w * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{panel_h}" viewBox="0 0 {width} {panel_h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (pi, p) in panels.iter().enumerate() {
        let ox = pi as f64 * panel_w;
        let (x0, x1, y0, y1) = (ox + ml, ox + panel_w - mr, mt, panel_h - mb);
        let has_stem = p.series.iter().any(|s| s.kind == SeriesKind::Stem);
        let ax = Axis::fit(p.series.iter().flat_map(|s| s.points.iter().map(|q| q.0)), p.log_x, false);
        let ay = Axis::fit(
            p.series.iter().flat_map(|s| {
                s.points
                    .iter()
                    .enumerate()
                    .flat_map(move |(i, q)| {
                        let e = s.errors.get(i).copied().unwrap_or(0.0);
                        [q.1 - e, q.1 + e]
                    })
            }),
            p.log_y,
            has_stem,
        );
        let px = |v: f64| x0 + ax.unit(v) * (x1 - x0);
        let py = |v: f64| y1 - ay.unit(v) * (y1 - y0);
        let _ = writeln!(out, r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#444"/>"##, x1 - x0, y1 - y0);
        for (v, s) in ax.ticks() {
            let x = px(v);
            let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{}" stroke="#444"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"##, y1 + 4.0, y1 + 16.0, esc(&s));
        }
        for (v, s) in ay.ticks() {
            let y = py(v);
            let _ = writeln!(out, r##"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="#444"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##, x0 - 4.0, x0 - 6.0, y + 4.0, esc(&s));
        }
        let _ = writeln!(out, r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#, (x0 + x1) / 2.0, esc(&p.title));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, panel_h - 10.0, esc(&p.xlabel));
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {} {:.2})">{}</text>"#,
            ox + 14.0,
            (y0 + y1) / 2.0,
            ox + 14.0,
            (y0 + y1) / 2.0,
            esc(&p.ylabel)
        );
        for (si, s) in p.series.iter().enumerate() {
            let c = PALETTE[si % PALETTE.len()];
            let pts: Vec<(f64, f64)> = s.points.iter().filter(|q| q.0.is_finite() && q.1.is_finite()).map(|q| (px(q.0), py(q.1))).collect();
            match s.kind {
                SeriesKind::Line | SeriesKind::ErrorBars => {
                    let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, path.join(" "));
                    if s.kind == SeriesKind::ErrorBars {
                        for (q, e) in s.points.iter().zip(&s.errors) {
                            let (x, ya, yb) = (px(q.0), py(q.1 - e), py(q.1 + e));
                            let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{ya:.2}" x2="{x:.2}" y2="{yb:.2}" stroke="{c}"/>"#);
                        }
                    }
                    for (x, y) in &pts {
                        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{c}"/>"#);
                    }
                }
                SeriesKind::Stem => {
                    let base = py(0.0);
                    for (x, y) in &pts {
                        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{base:.2}" x2="{x:.2}" y2="{y:.2}" stroke="{c}" stroke-width="1.5"/><circle cx="{x:.2}" cy="{y:.2}" r="3" fill="none" stroke="{c}"/>"#);
                    }
                }
                SeriesKind::Markers => {
                    for (x, y) in &pts {
                        let _ = writeln!(out, r#"<rect x="{:.2}" y="{:.2}" width="5" height="5" fill="{c}"/>"#, x - 2.5, y - 2.5);
                    }
                }
            }
            let ly = y0 + 14.0 + 14.0 * si as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="{c}" stroke-width="2"/><text x="{}" y="{:.2}">{}</text>"#,
                x1 - 110.0,
                ly - 4.0,
                x1 - 95.0,
                ly - 4.0,
                x1 - 90.0,
                ly,
                esc(&s.label)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_document() {
        let p = Panel::new("a<b", "x", "y")
            .push(Series::new("s", SeriesKind::Stem, vec![(0.0, 1.0), (1.0, 0.5)]))
            .push(Series::new("e", SeriesKind::ErrorBars, vec![(0.0, 0.2), (1.0, 0.1)]).with_errors(vec![0.05, 0.01]));
        let mut q = Panel::new("log", "m", "gamma");
        q.log_x = true;
        q.log_y = true;
        q = q.push(Series::new("g", SeriesKind::Line, vec![(8.0, 1e-2), (64.0, 1e-4)]));
        let svg = render(&[p, q], 300.0, 240.0);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("1e-3"));
        assert_eq!(svg.matches("<svg").count(), 1);
    }

    #[test]
    fn linear_ticks_are_round() {
        let a = Axis { lo: -0.3, hi: 2.7, log: false };
        let t: Vec<f64> = a.ticks().into_iter().map(|t| t.0).collect();
        assert_eq!(t, vec![0.0, 1.0, 2.0]);
    }
}
