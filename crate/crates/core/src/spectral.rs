//! Shared spectral helpers: FFT plumbing, periodograms and Butterworth
//! low-pass filters in second-order sections.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Full complex FFT of a real sequence zero-padded to `n_fft`.
pub fn fft_real(x: &[f64], n_fft: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().take(n_fft).map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n_fft, Complex64::new(0.0, 0.0));
    if n_fft > 0 {
        FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    }
    buf
}

/// Unnormalised inverse FFT in place.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    if !buf.is_empty() {
        FftPlanner::new().plan_fft_inverse(buf.len()).process(buf);
    }
}

/// One-sided amplitude spectrum `|FFT(x)|`, bins `0..=n/2`.
pub fn amplitude_spectrum(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    fft_real(x, n).iter().take(n / 2 + 1).map(|c| c.norm()).collect()
}

/// One-sided periodogram of `x` zero-padded to `n_fft`; returns
/// `(frequencies, psd)` with `psd` in units^2/Hz.
pub fn periodogram(x: &[f64], fs: f64, n_fft: usize) -> (Vec<f64>, Vec<f64>) {
    let spec = fft_real(x, n_fft);
    let n_bins = n_fft / 2 + 1;
    let norm = 1.0 / (fs * x.len().max(1) as f64);
    let psd = (0..n_bins)
        .map(|k| {
            let p = spec[k].norm_sqr() * norm;
            if k == 0 || (n_fft.is_multiple_of(2) && k == n_fft / 2) {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    let freqs = (0..n_bins).map(|k| k as f64 * fs / n_fft as f64).collect();
    (freqs, psd)
}

/// Hann window of length `n` (periodic=false, symmetric).
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

/// Second-order section `b0 + b1 z^-1 + b2 z^-2 / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Magnitude response at `f` for sampling rate `fs`.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z1 * self.a[0] + z2 * self.a[1];
        (num / den).norm()
    }
}

/// Digital Butterworth low-pass of even `order` via the bilinear transform
/// with frequency pre-warping.
pub fn butter_lowpass(order: usize, fc: f64, fs: f64) -> Result<Vec<Biquad>> {
    if order == 0 || !order.is_multiple_of(2) {
        return invalid("butterworth order must be a positive even number");
    }
    if !(fc > 0.0 && fc < 0.5 * fs) {
        return invalid(format!("cutoff {fc} Hz must lie in (0, {}) Hz", 0.5 * fs));
    }
    let k = 2.0 * fs;
    let wa = k * (PI * fc / fs).tan();
    let w2 = wa * wa;
    let sections = (0..order / 2)
        .map(|i| {
            let theta = PI * (2 * i + 1 + order) as f64 / (2 * order) as f64;
            let b = -2.0 * theta.cos() * wa;
            let a0 = k * k + b * k + w2;
            Biquad { b: [w2 / a0, 2.0 * w2 / a0, w2 / a0], a: [(2.0 * w2 - 2.0 * k * k) / a0, (k * k - b * k + w2) / a0] }
        })
        .collect();
    Ok(sections)
}

/// Cascade magnitude response.
pub fn sos_magnitude(sos: &[Biquad], f: f64, fs: f64) -> f64 {
    sos.iter().map(|s| s.magnitude(f, fs)).product()
}

/// Run the cascade over `x` (transposed direct form II) with states set to
/// the steady state of a constant input equal to `x[0]`.
fn sos_filter(sos: &[Biquad], x: &[f64]) -> Vec<f64> {
    let x0 = x.first().copied().unwrap_or(0.0);
    let mut level = x0;
    let mut state: Vec<[f64; 2]> = sos
        .iter()
        .map(|s| {
            let y = s.dc_gain() * level;
            let z2 = s.b[2] * level - s.a[1] * y;
            let z1 = y - s.b[0] * level;
            level = y;
            [z1, z2]
        })
        .collect();
    x.iter()
        .map(|&v| {
            let mut u = v;
            for (s, z) in sos.iter().zip(state.iter_mut()) {
                let y = s.b[0] * u + z[0];
                z[0] = s.b[1] * u - s.a[0] * y + z[1];
                z[1] = s.b[2] * u - s.a[1] * y;
                u = y;
            }
            u
        })
        .collect()
}

/// Zero-phase forward-backward filtering with odd reflection padding at both
/// ends (the squared magnitude response is applied, phase cancels).
pub fn sos_filtfilt(sos: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = (3 * (2 * sos.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let mut fwd = sos_filter(sos, &ext);
    fwd.reverse();
    let mut back = sos_filter(sos, &fwd);
    back.reverse();
    back[pad..pad + n].to_vec()
}
