//! Minimal static SVG plotting: framed axes, polylines, bars and
//! histograms.

use std::fmt::Write;

pub const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Data-to-pixel mapping for one panel.
#[derive(Debug, Clone, Copy)]
pub struct Axes {
    pub rect: Rect,
    pub x: (f64, f64),
    pub y: (f64, f64),
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

impl Axes {
    pub fn new(rect: Rect, x: (f64, f64), y: (f64, f64)) -> Self {
        Self { rect, x, y }
    }

    /// Ranges covering the data with a small vertical margin.
    pub fn fit(rect: Rect, xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Self {
        let x = span(xs);
        let (lo, hi) = span(ys);
        let m = 0.05 * (hi - lo);
        Self { rect, x, y: (lo - m, hi + m) }
    }

    pub fn px(&self, x: f64) -> f64 {
        self.rect.x + (x - self.x.0) / (self.x.1 - self.x.0) * self.rect.w
    }

    pub fn py(&self, y: f64) -> f64 {
        self.rect.y + self.rect.h - (y - self.y.0) / (self.y.1 - self.y.0) * self.rect.h
    }
}

/// Roughly `n` round tick positions inside `[lo, hi]`.
pub fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let raw = (hi - lo) / n.max(1) as f64;
    if !(raw > 0.0) || !raw.is_finite() {
        return vec![lo];
    }
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step - 1e-9).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height, body: String::new() }
    }

    pub fn text(&mut self, x: f64, y: f64, s: &str, size: f64, anchor: &str) {
        let _ = writeln!(self.body, r#"<text x="{x:.1}" y="{y:.1}" font-size="{size}" text-anchor="{anchor}" font-family="sans-serif">{}</text>"#, escape(s));
    }

    pub fn vtext(&mut self, x: f64, y: f64, s: &str, size: f64) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" font-size="{size}" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 {x:.1} {y:.1})">{}</text>"#,
            escape(s)
        );
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64, dash: bool) {
        let dash = if dash { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(self.body, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width}"{dash}/>"#);
    }

    pub fn rect(&mut self, r: Rect, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}" stroke="{stroke}"/>"#,
            r.x,
            r.y,
            r.w.max(0.0),
            r.h.max(0.0)
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str, stroke: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r}" fill="{fill}" stroke="{stroke}"/>"#);
    }

    /// Polyline of data points; non-finite points break the line.
    pub fn series(&mut self, ax: &Axes, xs: &[f64], ys: &[f64], stroke: &str, width: f64) {
        let mut run = String::new();
        let flush = |run: &mut String, body: &mut String| {
            if !run.is_empty() {
                let _ = writeln!(body, r#"<polyline fill="none" stroke="{stroke}" stroke-width="{width}" points="{}"/>"#, run.trim_end());
                run.clear();
            }
        };
        for (&x, &y) in xs.iter().zip(ys) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(run, "{:.2},{:.2} ", ax.px(x), ax.py(y.clamp(ax.y.0, ax.y.1)));
            } else {
                flush(&mut run, &mut self.body);
            }
        }
        flush(&mut run, &mut self.body);
    }

    /// Panel frame with ticks, labels and title.
    pub fn frame(&mut self, ax: &Axes, title: &str, xlabel: &str, ylabel: &str) {
        let r = ax.rect;
        self.rect(r, "none", "#333");
        for t in ticks(ax.x.0, ax.x.1, 5).into_iter().filter(|t| t.is_finite()) {
            let x = ax.px(t);
            self.line(x, r.y + r.h, x, r.y + r.h + 4.0, "#333", 1.0, false);
            self.text(x, r.y + r.h + 15.0, &fmt_tick(t), 10.0, "middle");
        }
        for t in ticks(ax.y.0, ax.y.1, 4).into_iter().filter(|t| t.is_finite()) {
            let y = ax.py(t);
            self.line(r.x - 4.0, y, r.x, y, "#333", 1.0, false);
            self.text(r.x - 6.0, y + 3.5, &fmt_tick(t), 10.0, "end");
        }
        if !title.is_empty() {
            self.text(r.x + r.w / 2.0, r.y - 6.0, title, 12.0, "middle");
        }
        if !xlabel.is_empty() {
            self.text(r.x + r.w / 2.0, r.y + r.h + 30.0, xlabel, 11.0, "middle");
        }
        if !ylabel.is_empty() {
            self.vtext(r.x - 42.0, r.y + r.h / 2.0, ylabel, 11.0);
        }
    }

    /// Legend entries stacked at the top-right corner of a panel.
    pub fn legend(&mut self, ax: &Axes, entries: &[(&str, &str)]) {
        let x = ax.rect.x + ax.rect.w - 120.0;
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = ax.rect.y + 14.0 + 14.0 * i as f64;
            self.line(x, y - 4.0, x + 16.0, y - 4.0, color, 2.0, false);
            self.text(x + 20.0, y, label, 10.0, "start");
        }
    }

    /// Grouped bars: `values[group][series]`, missing values left blank.
    pub fn grouped_bars(&mut self, ax: &Axes, values: &[Vec<Option<f64>>], group_labels: &[String], colors: &[&str]) {
        let n_groups = values.len().max(1) as f64;
        let group_w = ax.rect.w / n_groups;
        for (g, row) in values.iter().enumerate() {
            let n = row.len().max(1) as f64;
            let bar_w = 0.8 * group_w / n;
            let x0 = ax.rect.x + g as f64 * group_w + 0.1 * group_w;
            for (s, v) in row.iter().enumerate() {
                if let Some(v) = v.filter(|v| v.is_finite()) {
                    let top = ax.py(v.max(ax.y.0).min(ax.y.1));
                    let base = ax.py(0f64.max(ax.y.0));
                    let rect = Rect { x: x0 + s as f64 * bar_w, y: top.min(base), w: bar_w * 0.9, h: (base - top).abs() };
                    self.rect(rect, colors[s % colors.len()], "none");
                }
            }
            if let Some(label) = group_labels.get(g) {
                self.text(ax.rect.x + (g as f64 + 0.5) * group_w, ax.rect.y + ax.rect.h + 15.0, label, 10.0, "middle");
            }
        }
    }

    /// Histogram bars from precomputed bin edges and counts.
    pub fn histogram(&mut self, ax: &Axes, edges: &[f64], heights: &[f64], fill: &str) {
        for (i, h) in heights.iter().enumerate() {
            let (a, b) = (ax.px(edges[i]), ax.px(edges[i + 1]));
            let top = ax.py(*h);
            let base = ax.py(0.0);
            self.rect(Rect { x: a, y: top, w: b - a, h: base - top }, fill, "#fff");
        }
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Equal-width bins over `[lo, hi]`, heights normalised to probability.
pub fn bin(values: &[f64], lo: f64, hi: f64, n_bins: usize) -> (Vec<f64>, Vec<f64>) {
    let n_bins = n_bins.max(1);
    let w = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|i| lo + w * i as f64).collect();
    let mut counts = vec![0.0; n_bins];
    for &v in values {
        if w > 0.0 && v.is_finite() {
            let i = (((v - lo) / w).floor().max(0.0) as usize).min(n_bins - 1);
            counts[i] += 1.0;
        }
    }
    let total = values.len().max(1) as f64;
    (edges, counts.into_iter().map(|c| c / total).collect())
}
