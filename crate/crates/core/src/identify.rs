//! Modal parameters from separated modal responses: PSD peak picking, random
//! decrement damping, spurious-mode rejection, MAC and population statistics.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fem::{unit_max_positive, ModalReference};
use crate::graphdata::Split;
use crate::spectral::{next_pow2, periodogram};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifyConfig {
    pub rdt_trigger_sigmas: f64,
    pub rdt_cycles: f64,
    pub rdt_min_segments: usize,
    pub decrement_peaks: usize,
    pub min_dominance: f64,
    pub min_magnitude_ratio: f64,
    pub max_frequency_mismatch: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            rdt_trigger_sigmas: 2f64.sqrt(),
            rdt_cycles: 10.0,
            rdt_min_segments: 10,
            decrement_peaks: 5,
            min_dominance: 0.6,
            min_magnitude_ratio: 0.1,
            max_frequency_mismatch: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl Psd {
    pub fn resolution(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }
}

/// Full-segment periodogram zero-padded to the next power of two.
pub fn psd(q: &[f64], fs: f64) -> Result<Psd> {
    if q.len() < 16 {
        return invalid(format!("psd needs at least 16 samples, got {}", q.len()));
    }
    let (freqs, power) = periodogram(q, fs, next_pow2(q.len()));
    Ok(Psd { freqs, power })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPeak {
    pub frequency_hz: f64,
    pub bin: usize,
    pub magnitude: f64,
    pub dominance: f64,
}

/// Global maximum of the PSD (DC excluded) and its dominance over the
/// strongest local maximum outside the main lobe.
pub fn pick_frequency(psd: &Psd) -> SpectralPeak {
    let p = &psd.power;
    let n = p.len();
    let (bin, peak) = (1..n).fold((1.min(n.saturating_sub(1)), f64::NEG_INFINITY), |best, k| if p[k] > best.1 { (k, p[k]) } else { best });
    let flat = p.iter().skip(1).all(|&v| v == peak);
    if n < 3 || peak <= 0.0 || flat {
        return SpectralPeak { frequency_hz: psd.freqs.get(bin).copied().unwrap_or(0.0), bin, magnitude: peak.max(0.0), dominance: 0.5 };
    }
    let mut lo = bin;
    while lo > 1 && p[lo - 1] < p[lo] {
        lo -= 1;
    }
    let mut hi = bin;
    while hi + 1 < n && p[hi + 1] < p[hi] {
        hi += 1;
    }
    let secondary = (1..n).filter(|&k| k < lo || k > hi).filter(|&k| p[k] >= p[k - 1] && (k + 1 == n || p[k] >= p[k + 1])).map(|k| p[k]).fold(0.0, f64::max);
    SpectralPeak { frequency_hz: psd.freqs[bin], bin, magnitude: peak, dominance: peak / (peak + secondary) }
}

/// Random decrement signature: average of segments starting at each
/// up-crossing of `trigger_sigmas * std(q)`, each `cycles / fn_hint` long.
/// `None` when fewer than `min_segments` triggers fit in the record.
pub fn rdt(q: &[f64], fs: f64, fn_hint: f64, config: &IdentifyConfig) -> Option<Vec<f64>> {
    if q.is_empty() || !(fn_hint > 0.0) {
        return None;
    }
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    let sigma = (q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / q.len() as f64).sqrt();
    if sigma == 0.0 {
        return None;
    }
    let level = mean + config.rdt_trigger_sigmas * sigma;
    let len = ((config.rdt_cycles / fn_hint) * fs).round() as usize;
    if len < 2 {
        return None;
    }
    let starts: Vec<usize> = (1..q.len().saturating_sub(len - 1)).filter(|&t| q[t - 1] < level && q[t] >= level).collect();
    if starts.len() < config.rdt_min_segments {
        return None;
    }
    let mut sig = vec![0.0; len];
    for &s in &starts {
        for (acc, v) in sig.iter_mut().zip(&q[s..s + len]) {
            *acc += v - mean;
        }
    }
    let n = starts.len() as f64;
    sig.iter_mut().for_each(|v| *v /= n);
    Some(sig)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingFit {
    pub damping_ratio: f64,
    pub peaks_used: usize,
    pub valid: bool,
}

/// Positive local maxima refined by a parabola through the three samples.
fn positive_peaks(x: &[f64]) -> Vec<f64> {
    (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > 0.0 && x[i] > x[i - 1] && x[i] >= x[i + 1])
        .map(|i| {
            let (a, b, c) = (x[i - 1], x[i], x[i + 1]);
            let den = a - 2.0 * b + c;
            if den < 0.0 {
                b - 0.125 * (a - c) * (a - c) / den
            } else {
                b
            }
        })
        .collect()
}

/// Logarithmic decrement over the first `n_peaks` positive peaks.
pub fn fit_damping(signature: &[f64], n_peaks: usize) -> Result<DampingFit> {
    let peaks = positive_peaks(signature);
    if peaks.len() < 3 {
        return invalid(format!("damping fit needs 3 positive peaks, found {}", peaks.len()));
    }
    let used = peaks.len().min(n_peaks.max(2));
    let k = (used - 1) as f64;
    let delta = (peaks[0] / peaks[used - 1]).ln() / k;
    let zeta = delta / (4.0 * PI * PI + delta * delta).sqrt();
    Ok(DampingFit { damping_ratio: zeta, peaks_used: used, valid: zeta > 0.0 && zeta.is_finite() })
}

/// Modal assurance criterion.
pub fn mac(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return invalid(format!("mac of vectors with lengths {} and {}", a.len(), b.len()));
    }
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa == 0.0 || bb == 0.0 {
        return invalid("mac of a zero vector");
    }
    Ok((ab * ab / (aa * bb)).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedMode {
    pub frequency_hz: f64,
    /// `None` when the random decrement found too few triggers or the fit failed.
    pub damping_ratio: Option<f64>,
    pub mode_shape: Vec<f64>,
    pub psd_peak_magnitude: f64,
    pub single_peak_dominance: f64,
    pub source_index: usize,
}

/// Characterise every decomposed channel. `responses` is `P x T`, `shapes` is
/// `N x P`.
pub fn characterise(responses: &DMatrix<f64>, shapes: &DMatrix<f64>, fs: f64, config: &IdentifyConfig) -> Result<Vec<IdentifiedMode>> {
    if responses.nrows() != shapes.ncols() {
        return invalid(format!("{} responses but {} shapes", responses.nrows(), shapes.ncols()));
    }
    (0..responses.nrows())
        .map(|j| {
            let q: Vec<f64> = responses.row(j).iter().copied().collect();
            let peak = pick_frequency(&psd(&q, fs)?);
            let damping_ratio = rdt(&q, fs, peak.frequency_hz, config)
                .and_then(|sig| fit_damping(&sig, config.decrement_peaks).ok())
                .filter(|f| f.valid)
                .map(|f| f.damping_ratio);
            let mut mode_shape: Vec<f64> = shapes.column(j).iter().copied().collect();
            unit_max_positive(&mut mode_shape);
            Ok(IdentifiedMode {
                frequency_hz: peak.frequency_hz,
                damping_ratio,
                mode_shape,
                psd_peak_magnitude: peak.magnitude,
                single_peak_dominance: peak.dominance,
                source_index: j,
            })
        })
        .collect()
}

/// Keep at most `n_target` physical modes: rank by peak magnitude then
/// dominance, drop multi-peaked or weak channels and channels sharing an
/// already kept peak, and return the survivors sorted by frequency.
pub fn spurious_filter(candidates: &[IdentifiedMode], bin_hz: f64, n_target: usize, config: &IdentifyConfig) -> Result<Vec<IdentifiedMode>> {
    if candidates.len() < n_target {
        return invalid(format!("{} candidates for {n_target} target modes", candidates.len()));
    }
    let mut ranked: Vec<&IdentifiedMode> = candidates.iter().collect();
    ranked.sort_by(|a, b| {
        b.psd_peak_magnitude
            .total_cmp(&a.psd_peak_magnitude)
            .then(b.single_peak_dominance.total_cmp(&a.single_peak_dominance))
            .then(a.source_index.cmp(&b.source_index))
    });
    let mut kept: Vec<IdentifiedMode> = Vec::new();
    for m in ranked {
        if kept.len() == n_target {
            break;
        }
        if m.single_peak_dominance < config.min_dominance || m.psd_peak_magnitude <= 0.0 {
            continue;
        }
        if let Some(top) = kept.first() {
            if m.psd_peak_magnitude < config.min_magnitude_ratio * top.psd_peak_magnitude {
                continue;
            }
        }
        if kept.iter().any(|k| (k.frequency_hz - m.frequency_hz).abs() <= 1.5 * bin_hz) {
            continue;
        }
        kept.push(m.clone());
    }
    if kept.is_empty() {
        return invalid("decomposition failed: no channel passed the spurious-mode filter");
    }
    kept.sort_by(|a, b| a.frequency_hz.total_cmp(&b.frequency_hz));
    Ok(kept)
}

/// Identification outcome of one structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureIdentification {
    pub graph_id: usize,
    pub split: Split,
    pub modes: Vec<IdentifiedMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMatch {
    pub reference_mode: usize,
    /// `source_index` of the matched identified mode.
    pub identified_index: usize,
    pub mac: f64,
    pub frequency_error_pct: f64,
    pub damping_error_pct: Option<f64>,
    pub identified_frequency_hz: f64,
    pub identified_damping_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub graph_id: usize,
    pub split: Split,
    pub matches: Vec<ModeMatch>,
    pub unmatched_reference: Vec<usize>,
    pub unmatched_identified: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub count: usize,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) { 0.5 * (sorted[mid - 1] + sorted[mid]) } else { sorted[mid] };
        Some(Self { mean, median, std, count: values.len() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mac,
    FrequencyErrorPct,
    DampingErrorPct,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mac, Metric::FrequencyErrorPct, Metric::DampingErrorPct];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mac => "MAC",
            Metric::FrequencyErrorPct => "frequency_error_pct",
            Metric::DampingErrorPct => "damping_error_pct",
        }
    }

    fn value(self, m: &ModeMatch) -> Option<f64> {
        match self {
            Metric::Mac => Some(m.mac),
            Metric::FrequencyErrorPct => Some(m.frequency_error_pct),
            Metric::DampingErrorPct => m.damping_error_pct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub n_modes: usize,
    pub structures: Vec<StructureReport>,
}

/// Greedy nearest-frequency matching of identified modes to the first
/// `n_modes` reference modes, then MAC and signed percentage errors.
pub fn match_and_report(
    structures: &[StructureIdentification],
    references: &[&ModalReference],
    n_modes: usize,
    config: &IdentifyConfig,
) -> Result<IdentificationReport> {
    if structures.len() != references.len() {
        return invalid(format!("{} identifications for {} references", structures.len(), references.len()));
    }
    let reports = structures.iter().zip(references).map(|(s, r)| match_structure(s, r, n_modes, config)).collect::<Result<Vec<_>>>()?;
    Ok(IdentificationReport { n_modes, structures: reports })
}

fn match_structure(s: &StructureIdentification, r: &ModalReference, n_modes: usize, config: &IdentifyConfig) -> Result<StructureReport> {
    let n_ref = n_modes.min(r.n_modes());
    let mut pairs = Vec::new();
    for (i, m) in s.modes.iter().enumerate() {
        for j in 0..n_ref {
            let f_ref = r.frequencies_hz[j];
            let dist = (m.frequency_hz - f_ref).abs() / f_ref;
            if dist <= config.max_frequency_mismatch {
                pairs.push((dist, j, m.frequency_hz, m.source_index, i));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)).then(a.3.cmp(&b.3)));
    let mut ref_used = vec![false; n_ref];
    let mut id_used = vec![false; s.modes.len()];
    let mut matches = Vec::new();
    for (_, j, _, _, i) in pairs {
        if ref_used[j] || id_used[i] {
            continue;
        }
        ref_used[j] = true;
        id_used[i] = true;
        let m = &s.modes[i];
        let f_ref = r.frequencies_hz[j];
        let z_ref = r.damping_ratios[j];
        matches.push(ModeMatch {
            reference_mode: j,
            identified_index: m.source_index,
            mac: mac(&m.mode_shape, &r.shape(j))?,
            frequency_error_pct: (m.frequency_hz - f_ref) / f_ref * 100.0,
            damping_error_pct: m.damping_ratio.map(|z| (z - z_ref) / z_ref * 100.0),
            identified_frequency_hz: m.frequency_hz,
            identified_damping_ratio: m.damping_ratio,
        });
    }
    matches.sort_by_key(|m| m.reference_mode);
    Ok(StructureReport {
        graph_id: s.graph_id,
        split: s.split,
        unmatched_reference: (0..n_ref).filter(|&j| !ref_used[j]).collect(),
        unmatched_identified: id_used.iter().filter(|u| !**u).count(),
        matches,
    })
}

impl IdentificationReport {
    /// Values of `metric` for reference mode `mode` over structures whose
    /// split is in `splits`.
    pub fn values(&self, mode: usize, metric: Metric, splits: &[Split]) -> Vec<f64> {
        self.structures
            .iter()
            .filter(|s| splits.contains(&s.split))
            .flat_map(|s| s.matches.iter().filter(|m| m.reference_mode == mode))
            .filter_map(|m| metric.value(m))
            .collect()
    }

    pub fn stats(&self, mode: usize, metric: Metric, splits: &[Split]) -> Option<Stats> {
        Stats::of(&self.values(mode, metric, splits))
    }

    /// Mean of the absolute values, for error metrics.
    pub fn mean_abs(&self, mode: usize, metric: Metric, splits: &[Split]) -> Option<f64> {
        let v = self.values(mode, metric, splits);
        (!v.is_empty()).then(|| v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64)
    }

    pub fn unmatched(&self, mode: usize, splits: &[Split]) -> usize {
        self.structures.iter().filter(|s| splits.contains(&s.split) && s.unmatched_reference.contains(&mode)).count()
    }

    /// Long-format statistics table: `group,metric,mode,mean,median,std,count,unmatched`.
    /// Groups are `train` and `held_out` (validation + test); a group with
    /// no structures is omitted.
    pub fn stats_csv(&self) -> String {
        let mut out = String::from("group,metric,mode,mean,median,std,count,unmatched\n");
        for (group, splits) in report_groups() {
            if !self.structures.iter().any(|s| splits.contains(&s.split)) {
                continue;
            }
            for metric in Metric::ALL {
                for mode in 0..self.n_modes {
                    let unmatched = self.unmatched(mode, splits);
                    match self.stats(mode, metric, splits) {
                        Some(s) => out.push_str(&format!("{group},{},{},{},{},{},{},{unmatched}\n", metric.name(), mode + 1, s.mean, s.median, s.std, s.count)),
                        None => out.push_str(&format!("{group},{},{},,,,0,{unmatched}\n", metric.name(), mode + 1)),
                    }
                }
            }
        }
        out
    }

    /// One row per matched mode of every structure.
    pub fn matches_csv(&self) -> String {
        let mut out = String::from("graph_id,split,mode,mac,frequency_hz,frequency_error_pct,damping_ratio,damping_error_pct\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.structures {
            for m in &s.matches {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    s.graph_id,
                    s.split.name(),
                    m.reference_mode + 1,
                    m.mac,
                    m.identified_frequency_hz,
                    m.frequency_error_pct,
                    opt(m.identified_damping_ratio),
                    opt(m.damping_error_pct)
                ));
            }
        }
        out
    }

    /// Fixed-width table with metrics as row blocks and modes as columns.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        for (group, splits) in report_groups() {
            if !self.structures.iter().any(|s| splits.contains(&s.split)) {
                out.push_str(&format!("[{group}] no structures in this group\n\n"));
                continue;
            }
            out.push_str(&format!("[{group}]\n{:<22}{:<8}", "metric", "stat"));
            for mode in 0..self.n_modes {
                out.push_str(&format!("{:>12}", format!("mode {}", mode + 1)));
            }
            out.push('\n');
            for metric in Metric::ALL {
                for (stat, pick) in [("mean", 0usize), ("median", 1), ("std", 2)] {
                    out.push_str(&format!("{:<22}{:<8}", metric.name(), stat));
                    for mode in 0..self.n_modes {
                        let cell = self.stats(mode, metric, splits).map(|s| [s.mean, s.median, s.std][pick]);
                        match cell {
                            Some(v) => out.push_str(&format!("{v:>12.3}")),
                            None => out.push_str(&format!("{:>12}", "-")),
                        }
                    }
                    out.push('\n');
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn report_groups() -> [(&'static str, &'static [Split]); 2] {
    [("train", &[Split::Train]), ("held_out", &[Split::Validation, Split::Test])]
}
