//! Classical output-only identification from the measured channels only:
//! enhanced frequency domain decomposition, covariance-driven stochastic
//! subspace identification, and linear shape interpolation to all nodes.

use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::identify::{fit_damping, IdentifiedMode};
use crate::spectral::{fft_real, hann, ifft_in_place};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub segment_len: usize,
    pub overlap: f64,
    pub bell_mac: f64,
    pub min_peak_separation: usize,
    pub decrement_peaks: usize,
    /// SSI model order; `None` means twice the number of target modes.
    pub ssi_order: Option<usize>,
    pub ssi_max_damping: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { segment_len: 512, overlap: 0.5, bell_mac: 0.8, min_peak_separation: 3, decrement_peaks: 5, ssi_order: None, ssi_max_damping: 0.2 }
    }
}

/// Identified mode on the measured channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMode {
    pub frequency_hz: f64,
    pub damping_ratio: Option<f64>,
    pub shape: Vec<f64>,
    /// First singular value at the peak (EFDD) or modal contribution (SSI).
    pub strength: f64,
}

/// Welch cross-spectral density matrices, one Hermitian `M x M` matrix per
/// frequency line.
#[derive(Debug, Clone)]
pub struct CrossSpectralStack {
    pub freqs: Vec<f64>,
    pub g: Vec<DMatrix<Complex64>>,
    pub fs_hz: f64,
}

impl CrossSpectralStack {
    pub fn n_channels(&self) -> usize {
        self.g.first().map_or(0, |g| g.nrows())
    }

    pub fn coherence(&self, line: usize, i: usize, j: usize) -> f64 {
        let g = &self.g[line];
        g[(i, j)].norm_sqr() / (g[(i, i)].re * g[(j, j)].re)
    }
}

pub fn cross_psd(x: &DMatrix<f64>, fs: f64, config: &BaselineConfig) -> Result<CrossSpectralStack> {
    let (m, t) = x.shape();
    if m == 0 || t < 2 {
        return invalid("cross spectrum needs at least one channel and two samples");
    }
    let seg = if t < config.segment_len {
        warn!("record of {t} samples shorter than one {} sample segment, using a single segment", config.segment_len);
        t
    } else {
        config.segment_len
    };
    let step = (((1.0 - config.overlap) * seg as f64).round() as usize).max(1);
    let window = hann(seg);
    let w2: f64 = window.iter().map(|w| w * w).sum();
    let n_lines = seg / 2 + 1;
    let mut g = vec![DMatrix::<Complex64>::zeros(m, m); n_lines];
    let mut n_seg = 0usize;
    let mut start = 0;
    while start + seg <= t {
        let spectra: Vec<Vec<Complex64>> = (0..m)
            .map(|i| {
                let row: Vec<f64> = (0..seg).map(|k| x[(i, start + k)] * window[k]).collect();
                fft_real(&row, seg)
            })
            .collect();
        for (line, gl) in g.iter_mut().enumerate() {
            for i in 0..m {
                for j in 0..m {
                    gl[(i, j)] += spectra[i][line] * spectra[j][line].conj();
                }
            }
        }
        n_seg += 1;
        start += step;
    }
    let scale = 1.0 / (fs * w2 * n_seg as f64);
    for (line, gl) in g.iter_mut().enumerate() {
        let one_sided = if line == 0 || (seg % 2 == 0 && line == seg / 2) { 1.0 } else { 2.0 };
        *gl *= Complex64::new(scale * one_sided, 0.0);
    }
    let freqs = (0..n_lines).map(|k| k as f64 * fs / seg as f64).collect();
    Ok(CrossSpectralStack { freqs, g, fs_hz: fs })
}

/// |a^H b|^2 / (|a|^2 |b|^2)
pub fn complex_mac(a: &DVector<Complex64>, b: &DVector<Complex64>) -> f64 {
    let ab = a.dotc(b).norm_sqr();
    let den = a.norm_squared() * b.norm_squared();
    if den == 0.0 {
        0.0
    } else {
        ab / den
    }
}

/// Real shape from a complex one: rotate so the largest entry is real, then
/// take real parts.
pub fn realize(v: &DVector<Complex64>) -> Vec<f64> {
    let pivot = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(Complex64::new(1.0, 0.0));
    let rot = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { Complex64::new(1.0, 0.0) };
    v.iter().map(|c| (c * rot).re).collect()
}

/// Topographic prominence of each local maximum of `y`.
fn prominent_peaks(y: &[f64]) -> Vec<(usize, f64)> {
    let n = y.len();
    let mut peaks = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if !(y[i] > y[i - 1] && y[i] >= y[i + 1]) {
            continue;
        }
        let mut left_min = y[i];
        let mut j = i;
        while j > 0 {
            j -= 1;
            if y[j] > y[i] {
                break;
            }
            left_min = left_min.min(y[j]);
        }
        let mut right_min = y[i];
        let mut j = i;
        while j + 1 < n {
            j += 1;
            if y[j] > y[i] {
                break;
            }
            right_min = right_min.min(y[j]);
        }
        peaks.push((i, y[i] - left_min.max(right_min)));
    }
    peaks
}

fn zero_crossing_frequency(x: &[f64], fs: f64, from: usize, to: usize) -> Option<f64> {
    let times: Vec<f64> =
        (from.max(1)..=to.min(x.len() - 1)).filter(|&i| (x[i - 1] < 0.0) != (x[i] < 0.0)).map(|i| (i - 1) as f64 + x[i - 1] / (x[i - 1] - x[i])).collect();
    if times.len() < 2 {
        return None;
    }
    let span = (times[times.len() - 1] - times[0]) / fs;
    Some((times.len() - 1) as f64 / (2.0 * span))
}

/// Automated EFDD on a cross-spectral stack.
pub fn efdd_identify(stack: &CrossSpectralStack, n_target: usize, config: &BaselineConfig) -> Result<Vec<BaselineMode>> {
    let n_lines = stack.g.len();
    if n_lines < 3 {
        return invalid("too few spectral lines for EFDD");
    }
    let mut s1 = Vec::with_capacity(n_lines);
    let mut u1 = Vec::with_capacity(n_lines);
    for g in &stack.g {
        let svd = g.clone().svd(true, false);
        let u = svd.u.ok_or_else(|| Error::Numerical("svd failed".into()))?;
        let k = svd.singular_values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(k, _)| k);
        s1.push(svd.singular_values[k]);
        u1.push(u.column(k).into_owned());
    }

    let mut candidates = prominent_peaks(&s1);
    candidates.retain(|&(i, _)| i > 0);
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picked: Vec<usize> = Vec::new();
    for (i, _) in candidates {
        if picked.len() == n_target {
            break;
        }
        if picked.iter().all(|&p| p.abs_diff(i) >= config.min_peak_separation) {
            picked.push(i);
        }
    }
    picked.sort_unstable();

    let seg = 2 * (n_lines - 1);
    let df = stack.freqs[1];
    Ok(picked
        .into_iter()
        .map(|p| {
            let mut lo = p;
            while lo > 0 && complex_mac(&u1[lo - 1], &u1[p]) >= config.bell_mac {
                lo -= 1;
            }
            let mut hi = p;
            while hi + 1 < n_lines && complex_mac(&u1[hi + 1], &u1[p]) >= config.bell_mac {
                hi += 1;
            }
            let mut frequency_hz = p as f64 * df;
            let mut damping_ratio = None;
            if hi - lo + 1 >= 3 {
                let mut spec = vec![Complex64::new(0.0, 0.0); seg];
                for k in lo..=hi {
                    spec[k] = Complex64::new(s1[k], 0.0);
                    if k > 0 && k < seg / 2 {
                        spec[seg - k] = spec[k];
                    }
                }
                ifft_in_place(&mut spec);
                let acf: Vec<f64> = spec.iter().map(|c| c.re / spec[0].re).collect();
                let half = &acf[..seg / 2];
                if let Ok(fit) = fit_damping(half, config.decrement_peaks) {
                    if fit.valid {
                        damping_ratio = Some(fit.damping_ratio);
                    }
                }
                let last_peak = peak_positions(half).get(config.decrement_peaks.saturating_sub(1)).copied().unwrap_or(half.len() - 1);
                if let Some(f) = zero_crossing_frequency(half, stack.fs_hz, 0, last_peak) {
                    frequency_hz = f;
                }
            }
            BaselineMode { frequency_hz, damping_ratio, shape: realize(&u1[p]), strength: s1[p] }
        })
        .collect())
}

fn peak_positions(x: &[f64]) -> Vec<usize> {
    (1..x.len().saturating_sub(1)).filter(|&i| x[i] > 0.0 && x[i] > x[i - 1] && x[i] >= x[i + 1]).collect()
}

/// State-space model identified by SSI.
#[derive(Debug, Clone)]
pub struct SsiModel {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Next-state/output covariance `E[x_{t+1} y_t^T]`.
    pub g: DMatrix<f64>,
    pub order: usize,
}

fn output_covariance(x: &DMatrix<f64>, lag: usize) -> DMatrix<f64> {
    let (m, t) = x.shape();
    let n = t - lag;
    let future = x.columns(lag, n);
    let past = x.columns(0, n);
    let mut r = future * past.transpose();
    r /= n as f64;
    debug_assert_eq!(r.shape(), (m, m));
    r
}

/// Covariance-driven realization: block Hankel of output covariances with
/// `order` block rows, truncated SVD, shifted-observability least squares.
pub fn ssi_model(x: &DMatrix<f64>, order: usize) -> Result<SsiModel> {
    let (m, t) = x.shape();
    if order == 0 || !order.is_multiple_of(2) {
        return invalid("SSI model order must be a positive even number");
    }
    let rows = order.div_ceil(m).max(2) + 1;
    if t < 4 * rows {
        return invalid(format!("{t} samples too short for {rows} Hankel block rows"));
    }
    if m * rows <= order {
        return invalid("Hankel too small for the requested order");
    }
    let cov: Vec<DMatrix<f64>> = (0..2 * rows).map(|lag| output_covariance(x, lag)).collect();
    let mut h = DMatrix::zeros(m * rows, m * rows);
    for i in 0..rows {
        for j in 0..rows {
            h.view_mut((i * m, j * m), (m, m)).copy_from(&cov[i + j + 1]);
        }
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let idx = &idx[..order];
    let sqrt_s = DVector::from_iterator(order, idx.iter().map(|&k| svd.singular_values[k].sqrt()));
    let obs = DMatrix::from_fn(m * rows, order, |r, c| u[(r, idx[c])] * sqrt_s[c]);
    let ctrl = DMatrix::from_fn(order, m * rows, |r, c| vt[(idx[r], c)] * sqrt_s[r]);
    let upper = obs.rows(0, m * (rows - 1)).into_owned();
    let lower = obs.rows(m, m * (rows - 1)).into_owned();
    let a = upper.pseudo_inverse(1e-12).map_err(|e| Error::Numerical(format!("observability pseudo-inverse: {e}")))? * lower;
    let c = obs.rows(0, m).into_owned();
    let g = ctrl.columns(0, m).into_owned();
    Ok(SsiModel { a, c, g, order })
}

/// Eigenvector of `a` for eigenvalue `mu`: right singular vector of
/// `a - mu I` with the smallest singular value.
fn eigenvector(a: &DMatrix<Complex64>, mu: Complex64) -> Result<DVector<Complex64>> {
    let n = a.nrows();
    let shifted = a - DMatrix::<Complex64>::identity(n, n) * mu;
    let svd = shifted.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("svd failed".into()))?;
    let k = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(k, _)| k);
    Ok(vt.row(k).adjoint())
}

/// Physical modes of an SSI model, strongest `n_target` first by modal
/// contribution, returned in ascending frequency.
pub fn ssi_modes(model: &SsiModel, fs: f64, n_target: usize, config: &BaselineConfig) -> Result<Vec<BaselineMode>> {
    let eig = model.a.complex_eigenvalues();
    let ac = model.a.map(|v| Complex64::new(v, 0.0));
    let cc = model.c.map(|v| Complex64::new(v, 0.0));
    let gc = model.g.map(|v| Complex64::new(v, 0.0));
    let vectors: Vec<DVector<Complex64>> = eig.iter().map(|&mu| eigenvector(&ac, mu)).collect::<Result<_>>()?;
    let vmat = DMatrix::from_columns(&vectors);
    let modal_g = vmat.clone().try_inverse().map(|inv| inv * gc);

    let mut modes = Vec::new();
    for (k, &mu) in eig.iter().enumerate() {
        if mu.im <= 0.0 || mu.norm() == 0.0 {
            continue;
        }
        let lambda = mu.ln() * fs;
        let frequency_hz = lambda.norm() / (2.0 * PI);
        let zeta = -lambda.re / lambda.norm();
        if !(zeta > 0.0 && zeta < config.ssi_max_damping && frequency_hz > 0.0 && frequency_hz < 0.5 * fs) {
            continue;
        }
        let phi = &cc * &vectors[k];
        let participation = modal_g.as_ref().map_or(1.0, |mg| mg.row(k).norm());
        modes.push(BaselineMode { frequency_hz, damping_ratio: Some(zeta), shape: realize(&phi), strength: phi.norm() * participation });
    }
    modes.sort_by(|a, b| b.strength.total_cmp(&a.strength));
    modes.truncate(n_target);
    modes.sort_by(|a, b| a.frequency_hz.total_cmp(&b.frequency_hz));
    if modes.is_empty() {
        warn!("SSI found no physical modes at order {}", model.order);
    }
    Ok(modes)
}

pub fn ssi_identify(x: &DMatrix<f64>, fs: f64, n_target: usize, config: &BaselineConfig) -> Result<Vec<BaselineMode>> {
    let order = config.ssi_order.unwrap_or(2 * n_target);
    ssi_modes(&ssi_model(x, order)?, fs, n_target, config)
}

/// Extend shapes known at `measured_x` (rows of `shapes`) to `all_x` by
/// piecewise-linear interpolation with linear extrapolation at both ends.
pub fn interpolate_shapes(shapes: &DMatrix<f64>, measured_x: &[f64], all_x: &[f64]) -> Result<DMatrix<f64>> {
    if shapes.nrows() != measured_x.len() {
        return invalid(format!("{} shape rows for {} coordinates", shapes.nrows(), measured_x.len()));
    }
    let mut order: Vec<usize> = (0..measured_x.len()).collect();
    order.sort_by(|&a, &b| measured_x[a].total_cmp(&measured_x[b]));
    let mut xs: Vec<f64> = Vec::new();
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
    for i in order {
        let row: Vec<f64> = shapes.row(i).iter().copied().collect();
        if xs.last() == Some(&measured_x[i]) {
            let (acc, n) = rows.last_mut().unwrap();
            acc.iter_mut().zip(&row).for_each(|(a, v)| *a += v);
            *n += 1;
        } else {
            xs.push(measured_x[i]);
            rows.push((row, 1));
        }
    }
    if xs.len() < 2 {
        return invalid("interpolation needs at least two distinct measured positions");
    }
    let vals: Vec<Vec<f64>> = rows.into_iter().map(|(acc, n)| acc.into_iter().map(|v| v / n as f64).collect()).collect();
    Ok(DMatrix::from_fn(all_x.len(), shapes.ncols(), |r, c| {
        let x = all_x[r];
        let seg = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1) - 1;
        let (x0, x1) = (xs[seg], xs[seg + 1]);
        let t = (x - x0) / (x1 - x0);
        vals[seg][c] * (1.0 - t) + vals[seg + 1][c] * t
    }))
}

/// Convert baseline modes on measured channels to full-node identified modes.
pub fn to_identified(modes: &[BaselineMode], measured_x: &[f64], all_x: &[f64]) -> Result<Vec<IdentifiedMode>> {
    if modes.is_empty() {
        return Ok(Vec::new());
    }
    let shapes = DMatrix::from_fn(measured_x.len(), modes.len(), |r, c| modes[c].shape[r]);
    let full = interpolate_shapes(&shapes, measured_x, all_x)?;
    Ok(modes
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let mut mode_shape: Vec<f64> = full.column(j).iter().copied().collect();
            crate::fem::unit_max_positive(&mut mode_shape);
            IdentifiedMode {
                frequency_hz: m.frequency_hz,
                damping_ratio: m.damping_ratio,
                mode_shape,
                psd_peak_magnitude: m.strength,
                single_peak_dominance: 1.0,
                source_index: j,
            }
        })
        .collect())
}
