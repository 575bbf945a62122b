//! Sparse instrumentation and full-field reconstruction.
//!
//! The measurement pipeline runs in a fixed order: low-pass filtering,
//! optional decimation, sensor masking, feature propagation over the truss
//! graph and finally a single global max-normalisation per structure.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fem::TimeHistory;
use crate::population::TrussSpec;
use crate::spectral;

/// Multi-channel signals on all nodes of one structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSet {
    /// `N x T` signals.
    pub signals: DMatrix<f64>,
    /// `true` where the node carries a sensor.
    pub mask: Vec<bool>,
    pub fs_hz: f64,
    /// Divisor applied by [`max_normalize`] (1 when not normalised).
    pub normalization_scale: f64,
}

impl SignalSet {
    pub fn n_nodes(&self) -> usize {
        self.signals.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.signals.ncols()
    }

    pub fn measured_nodes(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }
}

/// Zero-phase Butterworth low-pass applied to every row.
pub fn lowpass_order(signals: &DMatrix<f64>, fc_hz: f64, fs_hz: f64, order: usize) -> Result<DMatrix<f64>> {
    let sos = spectral::butter_lowpass(order, fc_hz, fs_hz)?;
    let mut out = DMatrix::zeros(signals.nrows(), signals.ncols());
    for r in 0..signals.nrows() {
        let row: Vec<f64> = signals.row(r).iter().copied().collect();
        let filtered = spectral::sos_filtfilt(&sos, &row);
        for (c, v) in filtered.into_iter().enumerate() {
            out[(r, c)] = v;
        }
    }
    Ok(out)
}

/// 8th-order zero-phase Butterworth low-pass.
pub fn lowpass(signals: &DMatrix<f64>, fc_hz: f64, fs_hz: f64) -> Result<DMatrix<f64>> {
    lowpass_order(signals, fc_hz, fs_hz, 8)
}

/// Keep every `factor`-th column. Only valid on band-limited signals.
pub fn decimate(signals: &DMatrix<f64>, factor: usize) -> Result<DMatrix<f64>> {
    if factor == 0 {
        return invalid("decimation factor must be positive");
    }
    let cols: Vec<usize> = (0..signals.ncols()).step_by(factor).collect();
    Ok(signals.select_columns(&cols))
}

/// Evenly spaced sensors: nodes are ordered by x-coordinate and
/// `round(keep_fraction * N)` of them are taken at positions
/// `floor(i * N / M)`.
pub fn select_sensors(truss: &TrussSpec, keep_fraction: f64) -> Result<Vec<bool>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return invalid("keep fraction must lie in (0, 1]");
    }
    let n = truss.n_nodes();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| truss.node_coords[a].0.total_cmp(&truss.node_coords[b].0).then(a.cmp(&b)));
    let kept = (keep_fraction * n as f64).round() as usize;
    if kept < 2 {
        return invalid(format!("keep fraction {keep_fraction} leaves {kept} of {n} nodes measured"));
    }
    let mut mask = vec![false; n];
    for i in 0..kept {
        mask[order[i * n / kept]] = true;
    }
    Ok(mask)
}

/// Divide the whole matrix by its global max-abs entry.
pub fn max_normalize(signals: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let scale = signals.amax();
    if !(scale > 0.0) || !scale.is_finite() {
        return invalid("cannot normalise an all-zero or non-finite signal matrix");
    }
    Ok((signals / scale, scale))
}

/// Binary adjacency and its symmetric normalisation `D^-1/2 A D^-1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub a: DMatrix<f64>,
    pub a_tilde: DMatrix<f64>,
    pub degree: Vec<f64>,
}

pub fn normalized_adjacency(truss: &TrussSpec) -> Result<NormalizedAdjacency> {
    adjacency_from_edges(truss.n_nodes(), &truss.edges)
}

pub fn adjacency_from_edges(n: usize, edges: &[(usize, usize)]) -> Result<NormalizedAdjacency> {
    let mut a = DMatrix::zeros(n, n);
    for &(i, j) in edges {
        if i >= n || j >= n || i == j {
            return invalid(format!("bad edge ({i}, {j})"));
        }
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
    }
    let degree: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    if let Some(i) = degree.iter().position(|&d| d == 0.0) {
        return invalid(format!("node {i} is isolated"));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let a_tilde = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    Ok(NormalizedAdjacency { a, a_tilde, degree })
}

/// Feature propagation result with the per-iteration max change over the
/// unknown rows.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub signals: DMatrix<f64>,
    pub deltas: Vec<f64>,
}

/// Iterate `X_u <- A_uk X_k + A_uu X_u` with known rows held fixed, starting
/// from zeros on the unknown rows.
pub fn feature_propagate_traced(signals: &DMatrix<f64>, mask: &[bool], adjacency: &NormalizedAdjacency, iters: usize) -> Result<Propagation> {
    let n = signals.nrows();
    if mask.len() != n || adjacency.a_tilde.nrows() != n {
        return invalid("mask, signals and adjacency disagree on the node count");
    }
    let known: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let unknown: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
    let mut out = signals.clone();
    if unknown.is_empty() {
        return Ok(Propagation { signals: out, deltas: vec![0.0; iters] });
    }
    let a_uk = adjacency.a_tilde.select_rows(&unknown).select_columns(&known);
    let a_uu = adjacency.a_tilde.select_rows(&unknown).select_columns(&unknown);
    let x_k = signals.select_rows(&known);
    let drive = &a_uk * &x_k;
    let mut x_u = DMatrix::zeros(unknown.len(), signals.ncols());
    let mut deltas = Vec::with_capacity(iters);
    for it in 0..iters {
        let next = &drive + &a_uu * &x_u;
        let delta = (&next - &x_u).amax();
        deltas.push(delta);
        log::trace!("feature propagation iteration {}: delta {delta:e}", it + 1);
        x_u = next;
    }
    for (r, &node) in unknown.iter().enumerate() {
        out.set_row(node, &x_u.row(r));
    }
    Ok(Propagation { signals: out, deltas })
}

pub fn feature_propagate(signals: &DMatrix<f64>, mask: &[bool], adjacency: &NormalizedAdjacency, iters: usize) -> Result<DMatrix<f64>> {
    Ok(feature_propagate_traced(signals, mask, adjacency, iters)?.signals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensingConfig {
    pub cutoff_hz: f64,
    pub filter_order: usize,
    pub keep_fraction: f64,
    pub fp_iterations: usize,
    /// Keep every n-th sample after filtering (1 = no decimation).
    pub decimation: usize,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self { cutoff_hz: 20.0, filter_order: 8, keep_fraction: 0.18, fp_iterations: 40, decimation: 1 }
    }
}

/// Filtered measurements before masking; baselines consume these directly.
pub fn filtered_measurements(history: &TimeHistory, config: &SensingConfig) -> Result<(DMatrix<f64>, f64)> {
    let fs = history.fs_hz();
    let filtered = lowpass_order(&history.accelerations, config.cutoff_hz, fs, config.filter_order)?;
    let out = decimate(&filtered, config.decimation)?;
    Ok((out, fs / config.decimation as f64))
}

/// Full pipeline: filter, decimate, mask, propagate, normalise.
pub fn sense(history: &TimeHistory, truss: &TrussSpec, config: &SensingConfig) -> Result<SignalSet> {
    let (filtered, fs) = filtered_measurements(history, config)?;
    let mask = select_sensors(truss, config.keep_fraction)?;
    let mut masked = filtered;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            masked.row_mut(i).fill(0.0);
        }
    }
    let adjacency = normalized_adjacency(truss)?;
    let prop = feature_propagate_traced(&masked, &mask, &adjacency, config.fp_iterations)?;
    if let Some(last) = prop.deltas.last() {
        log::debug!("truss {}: final propagation delta {last:e}", truss.population_id);
    }
    let (signals, scale) = max_normalize(&prop.signals)?;
    Ok(SignalSet { signals, mask, fs_hz: fs, normalization_scale: scale })
}
