//! Tables and figures of a finished run.

use std::collections::BTreeMap;

use trussmodal_core::graphdata::{AttributedGraph, Split};
use trussmodal_core::identify::{psd, report_groups, Metric, StructureIdentification};
use trussmodal_core::population::TrussSpec;

use crate::artifacts::{read_json, StageRecorder, Workspace};
use crate::config::{Ablation, RunConfig, Stage};
use crate::error::{CliError, Result};
use crate::pipeline::{AblationSummary, GraphDecomposition, MethodResult};
use crate::svg::{bin, Axes, Rect, Svg, PALETTE};

/// One output of the report stage and what it shows.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub file: String,
    pub shows: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub train: f64,
    pub validation: Option<f64>,
}

pub fn parse_losses(text: &str) -> Result<Vec<LossRow>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let bad = || CliError::stage("report", format!("malformed loss row {l:?}"));
            let mut it = l.split(',');
            let epoch = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let train = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let validation = it.next().filter(|v| !v.is_empty()).map(|v| v.parse().map_err(|_| bad())).transpose()?;
            Ok(LossRow { epoch, train, validation })
        })
        .collect()
}

/// Method comparison over the train split: one row per method and mode.
pub fn comparison_csv(methods: &[&MethodResult], n_modes: usize) -> String {
    let train: &[Split] = &[Split::Train];
    let mut out = String::from("method,mode,mean_mac,mean_abs_frequency_error_pct,mean_abs_damping_error_pct,matched\n");
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in methods {
        for mode in 0..n_modes {
            let mac = m.report.stats(mode, Metric::Mac, train);
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.method,
                mode + 1,
                cell(mac.map(|s| s.mean)),
                cell(m.report.mean_abs(mode, Metric::FrequencyErrorPct, train)),
                cell(m.report.mean_abs(mode, Metric::DampingErrorPct, train)),
                mac.map(|s| s.count).unwrap_or(0)
            ));
        }
    }
    out
}

/// Graph ids drawn in the per-structure figures: the first train structure
/// and the first held-out one (or a second train structure).
pub fn representatives(graphs: &[AttributedGraph]) -> Vec<usize> {
    let mut out: Vec<usize> = graphs.iter().find(|g| g.split == Split::Train).map(|g| g.id).into_iter().collect();
    let second = graphs.iter().find(|g| g.split != Split::Train).or_else(|| graphs.iter().filter(|g| g.split == Split::Train).nth(1)).map(|g| g.id);
    out.extend(second);
    out
}

struct TrussView {
    rect: Rect,
    xr: (f64, f64),
    yr: (f64, f64),
    scale: f64,
}

impl TrussView {
    /// Equal-aspect view of a truss with room for a deflection of `amp`.
    fn new(rect: Rect, truss: &TrussSpec, amp: f64) -> Self {
        let xs = truss.node_coords.iter().map(|c| c.0);
        let ys = truss.node_coords.iter().map(|c| c.1);
        let xr = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let yr = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let yr = (yr.0 - amp, yr.1 + amp);
        let scale = (rect.w / (xr.1 - xr.0).max(1e-9)).min(rect.h / (yr.1 - yr.0).max(1e-9));
        Self { rect, xr, yr, scale }
    }

    fn px(&self, x: f64) -> f64 {
        let used = (self.xr.1 - self.xr.0) * self.scale;
        self.rect.x + (self.rect.w - used) / 2.0 + (x - self.xr.0) * self.scale
    }

    fn py(&self, y: f64) -> f64 {
        let used = (self.yr.1 - self.yr.0) * self.scale;
        self.rect.y + self.rect.h - (self.rect.h - used) / 2.0 - (y - self.yr.0) * self.scale
    }
}

/// Truss drawn undeformed in grey and, with `shape`, deflected vertically by
/// `amp * shape`. Measured nodes are solid dots, the rest hollow.
fn draw_truss(svg: &mut Svg, rect: Rect, truss: &TrussSpec, shape: Option<&[f64]>, mask: Option<&[bool]>, color: &str) {
    let height = truss.node_coords.iter().map(|c| c.1).fold(0.0f64, f64::max) - truss.node_coords.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let amp = 0.35 * height.max(1e-9);
    let v = TrussView::new(rect, truss, if shape.is_some() { amp } else { 0.0 });
    let pos = |i: usize, deform: bool| {
        let (x, y) = truss.node_coords[i];
        let dy = if deform { shape.map(|s| amp * s[i]).unwrap_or(0.0) } else { 0.0 };
        (v.px(x), v.py(y + dy))
    };
    for &(a, b) in &truss.edges {
        let (p, q) = (pos(a, false), pos(b, false));
        svg.line(p.0, p.1, q.0, q.1, if shape.is_some() { "#ccc" } else { color }, 1.0, false);
    }
    if shape.is_some() {
        for &(a, b) in &truss.edges {
            let (p, q) = (pos(a, true), pos(b, true));
            svg.line(p.0, p.1, q.0, q.1, color, 1.2, false);
        }
    }
    for i in 0..truss.node_coords.len() {
        let (x, y) = pos(i, shape.is_some());
        match mask {
            Some(m) if m[i] => svg.circle(x, y, 3.0, "#000", "#000"),
            Some(_) => svg.circle(x, y, 2.5, "#fff", "#000"),
            None => svg.circle(x, y, 1.5, "#000", "none"),
        }
    }
    for s in &truss.supports {
        let (x, y) = pos(s.node, false);
        svg.line(x - 5.0, y + 6.0, x + 5.0, y + 6.0, "#000", 2.0, false);
    }
}

fn population_figure(graphs: &[AttributedGraph], cfg: &RunConfig) -> String {
    let (cols, rows) = (2usize, 2usize);
    let (pw, ph) = (420.0, 200.0);
    let mut svg = Svg::new(40.0 + cols as f64 * (pw + 30.0), 250.0 + rows as f64 * (ph + 40.0));
    let b = &cfg.population.boundary;
    let outline = Rect { x: 40.0, y: 30.0, w: 500.0, h: 170.0 };
    let k = (outline.w / b.span_m).min(outline.h / b.height_m);
    let ox = outline.x + (outline.w - b.span_m * k) / 2.0;
    let oy = outline.y + outline.h;
    let inset = (b.span_m - b.top_span_m) / 2.0;
    let corners = [(0.0, 0.0), (b.span_m, 0.0), (b.span_m - inset, b.height_m), (inset, b.height_m), (0.0, 0.0)];
    for w in corners.windows(2) {
        svg.line(ox + w[0].0 * k, oy - w[0].1 * k, ox + w[1].0 * k, oy - w[1].1 * k, PALETTE[0], 2.0, false);
    }
    svg.text(outline.x + outline.w / 2.0, 20.0, &format!("boundary: span {} m, top {} m, height {} m", b.span_m, b.top_span_m, b.height_m), 12.0, "middle");
    for (slot, g) in graphs.iter().take(cols * rows).enumerate() {
        let rect = Rect { x: 40.0 + (slot % cols) as f64 * (pw + 30.0), y: 250.0 + (slot / cols) as f64 * (ph + 40.0), w: pw, h: ph };
        svg.text(
            rect.x + rect.w / 2.0,
            rect.y - 8.0,
            &format!("truss {} ({} nodes, {} members)", g.id, g.truss.node_coords.len(), g.truss.edges.len()),
            12.0,
            "middle",
        );
        draw_truss(&mut svg, rect, &g.truss, None, None, "#333");
    }
    svg.finish()
}

fn histogram_figure(graphs: &[AttributedGraph]) -> String {
    let n_modes = graphs.iter().map(|g| g.reference().n_modes()).min().unwrap_or(0);
    let mut svg = Svg::new(1000.0, 380.0);
    let panels = [("natural frequency (Hz)", true), ("damping ratio", false)];
    for (k, (label, freq)) in panels.into_iter().enumerate() {
        let per_mode: Vec<Vec<f64>> = (0..n_modes)
            .map(|m| graphs.iter().map(|g| if freq { g.reference().frequencies_hz[m] } else { g.reference().damping_ratios[m] }).collect())
            .collect();
        let all: Vec<f64> = per_mode.iter().flatten().copied().collect();
        let (lo, hi) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
        let hists: Vec<(Vec<f64>, Vec<f64>)> = per_mode.iter().map(|v| bin(v, lo, hi, 30)).collect();
        let top = hists.iter().flat_map(|h| h.1.iter().copied()).fold(0.0f64, f64::max).max(1e-9);
        let rect = Rect { x: 70.0 + k as f64 * 490.0, y: 40.0, w: 400.0, h: 270.0 };
        let ax = Axes::new(rect, (lo, hi), (0.0, 1.05 * top));
        for (m, (edges, h)) in hists.iter().enumerate() {
            svg.histogram(&ax, edges, h, PALETTE[m % PALETTE.len()]);
        }
        svg.frame(&ax, if freq { "natural frequencies" } else { "damping ratios" }, label, "probability");
        let names: Vec<String> = (0..n_modes).map(|m| format!("mode {}", m + 1)).collect();
        let entries: Vec<(&str, &str)> = names.iter().enumerate().map(|(m, n)| (n.as_str(), PALETTE[m % PALETTE.len()])).collect();
        svg.legend(&ax, &entries);
    }
    svg.finish()
}

fn psd_series(q: &[f64], fs: f64, f_max: f64) -> (Vec<f64>, Vec<f64>) {
    match psd(q, fs) {
        Ok(p) => p.freqs.iter().zip(&p.power).filter(|(f, _)| **f <= f_max).map(|(f, v)| (*f, v.max(1e-300).log10())).unzip(),
        Err(_) => (Vec::new(), Vec::new()),
    }
}

fn signals_figure(g: &AttributedGraph, f_max: f64) -> String {
    let measured = g.signals.measured_nodes();
    let n_show = measured.len().min(6);
    let picks: Vec<usize> = (0..n_show).map(|k| measured[if n_show > 1 { k * (measured.len() - 1) / (n_show - 1) } else { 0 }]).collect();
    let fs = g.signals.fs_hz;
    let (rw, rh) = (520.0, 90.0);
    let mut svg = Svg::new(1000.0, 60.0 + n_show as f64 * (rh + 45.0));
    svg.text(500.0, 20.0, &format!("truss {}: filtered accelerations of measured nodes and their PSD", g.id), 13.0, "middle");
    for (r, &node) in picks.iter().enumerate() {
        let y: Vec<f64> = g.signals.signals.row(node).iter().copied().collect();
        let t: Vec<f64> = (0..y.len()).map(|i| i as f64 / fs).collect();
        let top = 50.0 + r as f64 * (rh + 45.0);
        let ax = Axes::fit(Rect { x: 70.0, y: top, w: rw, h: rh }, t.iter().copied(), y.iter().copied());
        svg.series(&ax, &t, &y, PALETTE[0], 0.8);
        svg.frame(&ax, &format!("node {node}"), if r + 1 == n_show { "time (s)" } else { "" }, "accel.");
        let (f, p) = psd_series(&y, fs, f_max);
        let ax = Axes::fit(Rect { x: 680.0, y: top, w: 290.0, h: rh }, f.iter().copied(), p.iter().copied());
        svg.series(&ax, &f, &p, PALETTE[1], 0.8);
        svg.frame(&ax, "", if r + 1 == n_show { "frequency (Hz)" } else { "" }, "log10 PSD");
    }
    svg.finish()
}

fn loss_figure(series: &[(String, Vec<LossRow>)]) -> String {
    let mut svg = Svg::new(760.0, 440.0);
    let rect = Rect { x: 80.0, y: 40.0, w: 640.0, h: 330.0 };
    let log = |v: f64| if v > 0.0 { v.log10() } else { f64::NAN };
    let xs = series.iter().flat_map(|(_, r)| r.iter().map(|x| x.epoch as f64));
    let ys = series.iter().flat_map(|(_, r)| r.iter().flat_map(|x| [Some(x.train), x.validation]).flatten().map(log));
    let ax = Axes::fit(rect, xs, ys);
    let mut entries = Vec::new();
    for (k, (name, rows)) in series.iter().enumerate() {
        let e: Vec<f64> = rows.iter().map(|r| r.epoch as f64).collect();
        let tr: Vec<f64> = rows.iter().map(|r| log(r.train)).collect();
        let va: Vec<f64> = rows.iter().map(|r| r.validation.map(log).unwrap_or(f64::NAN)).collect();
        svg.series(&ax, &e, &tr, PALETTE[(2 * k) % PALETTE.len()], 1.2);
        svg.series(&ax, &e, &va, PALETTE[(2 * k + 1) % PALETTE.len()], 1.2);
        entries.push((format!("{name} train"), PALETTE[(2 * k) % PALETTE.len()]));
        entries.push((format!("{name} validation"), PALETTE[(2 * k + 1) % PALETTE.len()]));
    }
    svg.frame(&ax, "training and validation loss", "epoch", "log10 loss");
    let refs: Vec<(&str, &str)> = entries.iter().map(|(n, c)| (n.as_str(), *c)).collect();
    svg.legend(&ax, &refs);
    svg.finish()
}

/// `P` rows by three columns: modal response, its PSD with reference
/// frequencies marked, and the mode shape over the truss.
fn decomposition_figure(g: &AttributedGraph, d: &GraphDecomposition, ident: Option<&StructureIdentification>, n_ref: usize, f_max: f64) -> String {
    let q = &d.result.modal_responses;
    let phi = &d.result.mode_shapes;
    let p = q.nrows();
    let fs = g.signals.fs_hz;
    let (rh, gap) = (120.0, 50.0);
    let mut svg = Svg::new(1200.0, 60.0 + p as f64 * (rh + gap));
    svg.text(600.0, 22.0, &format!("truss {} ({}): decomposed modes", g.id, g.split.name()), 13.0, "middle");
    let reference = g.reference();
    for j in 0..p {
        let top = 50.0 + j as f64 * (rh + gap);
        let last = j + 1 == p;
        let y: Vec<f64> = q.row(j).iter().copied().collect();
        let t: Vec<f64> = (0..y.len()).map(|i| i as f64 / fs).collect();
        let ax = Axes::fit(Rect { x: 70.0, y: top, w: 420.0, h: rh }, t.iter().copied(), y.iter().copied());
        svg.series(&ax, &t, &y, PALETTE[0], 0.8);
        let label = ident.and_then(|s| s.modes.iter().find(|m| m.source_index == j)).map(|m| {
            let z = m.damping_ratio.map(|z| format!(", zeta {z:.4}")).unwrap_or_default();
            format!("q{}: {:.3} Hz{z}", j + 1, m.frequency_hz)
        });
        svg.frame(&ax, &label.unwrap_or_else(|| format!("q{} (filtered out)", j + 1)), if last { "time (s)" } else { "" }, "response");

        let (f, pw) = psd_series(&y, fs, f_max);
        let ax = Axes::fit(Rect { x: 570.0, y: top, w: 300.0, h: rh }, f.iter().copied(), pw.iter().copied());
        svg.series(&ax, &f, &pw, PALETTE[1], 0.8);
        for &fr in reference.frequencies_hz.iter().take(n_ref) {
            if fr <= ax.x.1 {
                let x = ax.px(fr);
                svg.line(x, ax.rect.y, x, ax.rect.y + ax.rect.h, "#555", 0.8, true);
            }
        }
        svg.frame(&ax, "PSD (dashed: reference frequencies)", if last { "frequency (Hz)" } else { "" }, "log10 PSD");

        let shape: Vec<f64> = phi.column(j).iter().copied().collect();
        let rect = Rect { x: 900.0, y: top, w: 280.0, h: rh };
        draw_truss(&mut svg, rect, &g.truss, Some(&shape), Some(&g.signals.mask), PALETTE[2]);
    }
    svg.finish()
}

/// Reference shapes next to each method's identified shapes of one truss.
fn mode_shape_figure(g: &AttributedGraph, methods: &[&MethodResult], n_modes: usize) -> String {
    let cols = 1 + methods.len();
    let (cw, rh) = (300.0, 120.0);
    let mut svg = Svg::new(40.0 + cols as f64 * (cw + 20.0), 60.0 + n_modes as f64 * (rh + 40.0));
    svg.text(
        20.0 + cols as f64 * (cw + 20.0) / 2.0,
        20.0,
        &format!("truss {}: reference and identified mode shapes (solid dots: measured nodes)", g.id),
        13.0,
        "middle",
    );
    let reference = g.reference();
    for m in 0..n_modes.min(reference.n_modes()) {
        let top = 50.0 + m as f64 * (rh + 40.0);
        let true_shape: Vec<f64> = reference.mode_shapes.column(m).iter().copied().collect();
        let rect = Rect { x: 20.0, y: top, w: cw, h: rh };
        svg.text(rect.x + cw / 2.0, top - 6.0, &format!("reference mode {}: {:.3} Hz", m + 1, reference.frequencies_hz[m]), 11.0, "middle");
        draw_truss(&mut svg, rect, &g.truss, Some(&true_shape), Some(&g.signals.mask), "#000");
        for (c, method) in methods.iter().enumerate() {
            let rect = Rect { x: 20.0 + (c + 1) as f64 * (cw + 20.0), y: top, w: cw, h: rh };
            let hit =
                method.report.structures.iter().find(|s| s.graph_id == g.id).and_then(|s| s.matches.iter().find(|x| x.reference_mode == m)).and_then(|x| {
                    let st = method.structures.iter().find(|s| s.graph_id == g.id)?;
                    Some((x, st.modes.iter().find(|m| m.source_index == x.identified_index)?))
                });
            match hit {
                Some((x, mode)) => {
                    let mut shape = mode.mode_shape.clone();
                    let dot: f64 = shape.iter().zip(&true_shape).map(|(a, b)| a * b).sum();
                    if dot < 0.0 {
                        shape.iter_mut().for_each(|v| *v = -*v);
                    }
                    svg.text(
                        rect.x + cw / 2.0,
                        top - 6.0,
                        &format!("{}: {:.3} Hz, MAC {:.3}", method.method, x.identified_frequency_hz, x.mac),
                        11.0,
                        "middle",
                    );
                    draw_truss(&mut svg, rect, &g.truss, Some(&shape), Some(&g.signals.mask), PALETTE[(c + 1) % PALETTE.len()]);
                }
                None => svg.text(rect.x + cw / 2.0, top + rh / 2.0, &format!("{}: not identified", method.method), 11.0, "middle"),
            }
        }
    }
    svg.finish()
}

/// Bar panels of per-mode values: one group per mode, one bar per row.
fn bars_figure(title: &str, rows: &[(String, Vec<Option<f64>>)], panels: &[(&str, usize)], extra: Option<(&str, Vec<Option<f64>>)>) -> String {
    let n_panels = rows.first().map(|_| panels.len()).unwrap_or(0) + usize::from(extra.is_some());
    let mut svg = Svg::new(80.0 + n_panels as f64 * 400.0, 420.0);
    svg.text(40.0 + n_panels as f64 * 200.0, 20.0, title, 13.0, "middle");
    let colors: Vec<&str> = (0..rows.len()).map(|i| PALETTE[i % PALETTE.len()]).collect();
    let n_modes = rows.iter().map(|r| r.1.len()).max().unwrap_or(0) / panels.len().max(1);
    for (k, (label, offset)) in panels.iter().enumerate() {
        let values: Vec<Vec<Option<f64>>> = (0..n_modes).map(|m| rows.iter().map(|r| r.1.get(offset + m).copied().flatten()).collect()).collect();
        let hi = values.iter().flatten().flatten().fold(0.0f64, |a, &b| a.max(b)).max(1e-9);
        let ax = Axes::new(Rect { x: 70.0 + k as f64 * 400.0, y: 50.0, w: 320.0, h: 280.0 }, (0.0, 1.0), (0.0, 1.1 * hi));
        let labels: Vec<String> = (0..n_modes).map(|m| format!("mode {}", m + 1)).collect();
        svg.grouped_bars(&ax, &values, &labels, &colors);
        svg.frame(&Axes { x: (f64::NAN, f64::NAN), ..ax }, label, "", "");
        let names: Vec<(&str, &str)> = rows.iter().enumerate().map(|(i, r)| (r.0.as_str(), colors[i])).collect();
        svg.legend(&ax, &names);
    }
    if let Some((label, vals)) = extra {
        let k = panels.len();
        let hi = vals.iter().flatten().fold(0.0f64, |a, &b| a.max(b)).max(1e-9);
        let ax = Axes::new(Rect { x: 70.0 + k as f64 * 400.0, y: 50.0, w: 320.0, h: 280.0 }, (0.0, 1.0), (0.0, 1.1 * hi));
        let values: Vec<Vec<Option<f64>>> = vals.iter().enumerate().map(|(i, v)| (0..rows.len()).map(|j| if i == j { *v } else { None }).collect()).collect();
        let labels: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
        svg.grouped_bars(&ax, &values, &labels, &colors);
        svg.frame(&Axes { x: (f64::NAN, f64::NAN), ..ax }, label, "", "");
    }
    svg.finish()
}

fn method_rows(methods: &[&MethodResult], n: usize) -> Vec<(String, Vec<Option<f64>>)> {
    let train: &[Split] = &[Split::Train];
    methods
        .iter()
        .map(|m| {
            let mut v: Vec<Option<f64>> = (0..n).map(|k| m.report.stats(k, Metric::Mac, train).map(|s| s.mean)).collect();
            v.extend((0..n).map(|k| m.report.mean_abs(k, Metric::FrequencyErrorPct, train)));
            (m.method.clone(), v)
        })
        .collect()
}

pub fn render_report(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let mut rec = StageRecorder::new(ws, Stage::Report, ws.report_dir())?;
    let graphs = trussmodal_core::graphdata::load(rec.input(&ws.dataset(), Stage::Sense)?)?.0;
    let decomps: Vec<GraphDecomposition> = read_json(&rec.input(&ws.decomposition(Ablation::Full), Stage::Decompose)?, Stage::Decompose)?;
    let main: MethodResult = read_json(&rec.input(&ws.identification(Ablation::Full), Stage::Identify)?, Stage::Identify)?;
    let losses_path = rec.input(&ws.losses(Ablation::Full), Stage::Train)?;
    let losses = parse_losses(&std::fs::read_to_string(&losses_path).map_err(|source| CliError::Io { path: losses_path.clone(), source })?)?;

    let mut baselines = Vec::new();
    for method in ["efdd", "ssi"] {
        let path = ws.baseline(method);
        if path.exists() {
            baselines.push(read_json::<MethodResult>(&rec.input(&path, Stage::Baseline)?, Stage::Baseline)?);
        }
    }
    let ablation: Option<AblationSummary> =
        if ws.ablation_summary().exists() { Some(read_json(&rec.input(&ws.ablation_summary(), Stage::Ablate)?, Stage::Ablate)?) } else { None };

    let n = cfg.n_target_modes;
    let f_max = (1.25 * cfg.sensing.cutoff_hz).min(graphs.first().map(|g| g.signals.fs_hz / 2.0).unwrap_or(f64::INFINITY));
    let mut coverage = Vec::new();
    let mut notes = Vec::new();
    let mut emit = |rec: &mut StageRecorder<'_>, file: String, shows: &str, body: String| -> Result<()> {
        rec.write(&file, body)?;
        coverage.push(Coverage { file, shows: shows.into() });
        Ok(())
    };

    emit(&mut rec, "population_geometry.svg".into(), "trapezoidal boundary and representative generated trusses", population_figure(&graphs, cfg))?;
    emit(
        &mut rec,
        "population_histograms.svg".into(),
        "probability histograms of reference frequencies and damping ratios per mode",
        histogram_figure(&graphs),
    )?;
    let reps = representatives(&graphs);
    let by_id: BTreeMap<usize, &AttributedGraph> = graphs.iter().map(|g| (g.id, g)).collect();
    for &id in &reps {
        emit(&mut rec, format!("signals_truss{id}.svg"), "filtered measured accelerations with their PSD", signals_figure(by_id[&id], f_max))?;
    }
    emit(&mut rec, "loss_curves.svg".into(), "training and validation loss per epoch", loss_figure(&[("full".into(), losses)]))?;
    for &id in &reps {
        if let Some(d) = decomps.iter().find(|d| d.graph_id == id) {
            let ident = main.structures.iter().find(|s| s.graph_id == id);
            emit(
                &mut rec,
                format!("decomposition_truss{id}.svg"),
                "decomposed modes: response, PSD with reference markers, shape over topology",
                decomposition_figure(by_id[&id], d, ident, n, f_max),
            )?;
        }
    }

    emit(
        &mut rec,
        "table1.csv".into(),
        "identification statistics (mean/median/std per mode and metric) for train and held-out trusses",
        main.report.stats_csv(),
    )?;
    emit(&mut rec, "table1.txt".into(), "the same statistics as a fixed-width table", main.report.format_table())?;
    for (group, splits) in report_groups() {
        if !main.report.structures.iter().any(|s| splits.contains(&s.split)) {
            notes.push(format!("{group}: no structures in this split, its table section is omitted"));
        }
    }

    let mut methods: Vec<&MethodResult> = vec![&main];
    methods.extend(baselines.iter());
    if baselines.is_empty() {
        notes.push("baseline stage not run: method comparison covers the network only".into());
    }
    emit(&mut rec, "table2.csv".into(), "method comparison on the train trusses: mean MAC and absolute errors per mode", comparison_csv(&methods, n))?;
    emit(
        &mut rec,
        "method_comparison.svg".into(),
        "bar charts of mean MAC and frequency error per mode and method",
        bars_figure("method comparison (train trusses)", &method_rows(&methods, n), &[("mean MAC", 0), ("mean |frequency error| (%)", n)], None),
    )?;
    if let Some(&id) = reps.first() {
        emit(
            &mut rec,
            format!("mode_shapes_truss{id}.svg"),
            "reference and identified mode shapes per method with measured nodes marked",
            mode_shape_figure(by_id[&id], &methods, n),
        )?;
    }

    match &ablation {
        Some(a) => {
            let rows: Vec<(String, Vec<Option<f64>>)> =
                a.rows.iter().map(|r| (r.method.clone(), r.train_mac.iter().chain(&r.train_abs_frequency_error_pct).copied().collect())).collect();
            let mixing = a.rows.iter().map(|r| r.train_mode_mixing).collect();
            emit(
                &mut rec,
                "ablation.svg".into(),
                "ablation variants: mean MAC, frequency error and mode mixing",
                bars_figure(
                    "ablation study (train trusses)",
                    &rows,
                    &[("mean MAC", 0), ("mean |frequency error| (%)", n)],
                    Some(("mean |off-diagonal R(Q)|", mixing)),
                ),
            )?;
            emit(&mut rec, "ablation.csv".into(), "ablation summary table", a.csv())?;
        }
        None => notes.push("ablate stage not run: no ablation figure".into()),
    }

    let mut text = String::from("file,shows\n");
    for c in &coverage {
        text.push_str(&format!("{},{}\n", c.file, c.shows));
    }
    rec.write("coverage.csv", text)?;
    let mut note_text = notes.join("\n");
    note_text.push('\n');
    rec.write("notes.txt", note_text)?;
    rec.finish(cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_rows_parse_with_and_without_validation() {
        let rows = parse_losses("epoch,train_loss,validation_loss\n1,2.5,3\n2,1.5,\n").unwrap();
        assert_eq!(rows, vec![LossRow { epoch: 1, train: 2.5, validation: Some(3.0) }, LossRow { epoch: 2, train: 1.5, validation: None }]);
        assert!(parse_losses("h\nx,1,\n").is_err());
    }

    #[test]
    fn mode_shape_figure_resolves_matches_by_source_index() {
        use trussmodal_core::fem::SimulationConfig;
        use trussmodal_core::graphdata::{build, DatasetInfo};
        use trussmodal_core::identify::{match_and_report, IdentifiedMode, IdentifyConfig};
        use trussmodal_core::population::TrapezoidSpec;
        use trussmodal_core::sensing::SensingConfig;

        let info = DatasetInfo {
            population_seed: 3,
            boundary: TrapezoidSpec::default(),
            simulation: SimulationConfig::with_steps(256),
            sensing: SensingConfig::default(),
        };
        let g = build(&info, 1, [1.0, 0.0, 0.0]).unwrap().remove(0);
        let reference = g.reference();
        // The only surviving mode came from decoder channel 4.
        let mode = IdentifiedMode {
            frequency_hz: reference.frequencies_hz[0],
            damping_ratio: None,
            mode_shape: reference.shape(0),
            psd_peak_magnitude: 1.0,
            single_peak_dominance: 1.0,
            source_index: 4,
        };
        let structures = vec![StructureIdentification { graph_id: g.id, split: g.split, modes: vec![mode] }];
        let report = match_and_report(&structures, &[reference], 2, &IdentifyConfig::default()).unwrap();
        assert_eq!(report.structures[0].matches[0].identified_index, 4);
        let summary = crate::pipeline::MethodSummary {
            method: "full".into(),
            train_mac: vec![],
            train_abs_frequency_error_pct: vec![],
            held_out_mac: vec![],
            train_mode1_damping: None,
            train_mode1_damping_count: 0,
            train_mode_mixing: None,
            highest_matched_mode: None,
        };
        let result = MethodResult { method: "full".into(), structures, failed: vec![], report, summary };
        assert!(mode_shape_figure(&g, &[&result], 2).contains("MAC 1.000"));
    }
}
