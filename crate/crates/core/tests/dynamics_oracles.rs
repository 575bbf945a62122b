//! Closed-form single-degree-of-freedom oracles for the integrator and the
//! random decrement damping estimator.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use trussmodal_core::fem::{newmark, newmark_from, NewmarkParams, SystemMatrices};
use trussmodal_core::identify::{fit_damping, rdt, IdentifyConfig};

fn sdof(f: f64, zeta: f64) -> SystemMatrices {
    let w = 2.0 * PI * f;
    SystemMatrices { k: DMatrix::from_element(1, 1, w * w), m: DMatrix::from_element(1, 1, 1.0), c: DMatrix::from_element(1, 1, 2.0 * zeta * w) }
}

fn analytic(f: f64, zeta: f64, t: f64) -> f64 {
    let w = 2.0 * PI * f;
    let wd = w * (1.0 - zeta * zeta).sqrt();
    (-zeta * w * t).exp() * ((wd * t).cos() + zeta * w / wd * (wd * t).sin())
}

fn free_decay_rms_error(dt: f64, duration: f64) -> f64 {
    let (f, zeta) = (1.0, 0.02);
    let steps = (duration / dt).round() as usize + 1;
    let load = DMatrix::zeros(1, steps);
    let r = newmark_from(&sdof(f, zeta), &load, dt, NewmarkParams::default(), &DVector::from_element(1, 1.0), &DVector::zeros(1)).unwrap();
    let (mut err, mut norm) = (0.0, 0.0);
    for t in 0..steps {
        let exact = analytic(f, zeta, t as f64 * dt);
        err += (r.displacement[(0, t)] - exact).powi(2);
        norm += exact * exact;
    }
    (err / norm).sqrt()
}

#[test]
fn newmark_free_decay_matches_damped_cosine() {
    let e = free_decay_rms_error(0.005, 2.0);
    assert!(e < 1e-3, "relative RMS error {e}");
}

#[test]
fn newmark_is_second_order() {
    let coarse = free_decay_rms_error(0.01, 2.0);
    let fine = free_decay_rms_error(0.005, 2.0);
    let order = (coarse / fine).log2();
    assert!((order - 2.0).abs() < 0.1, "observed order {order}");
}

#[test]
fn undamped_energy_is_conserved() {
    let w = 2.0 * PI * 1.5;
    let sys = sdof(1.5, 0.0);
    let steps = 4000;
    let r = newmark_from(&sys, &DMatrix::zeros(1, steps), 0.005, NewmarkParams::default(), &DVector::from_element(1, 1.0), &DVector::zeros(1)).unwrap();
    let energy = |t: usize| 0.5 * r.velocity[(0, t)].powi(2) + 0.5 * w * w * r.displacement[(0, t)].powi(2);
    let e0 = energy(0);
    for t in 0..steps {
        assert!((energy(t) - e0).abs() < 1e-10 * e0);
    }
}

#[test]
fn rdt_recovers_sdof_damping_from_random_response() {
    let (f, zeta, fs) = (4.0, 0.01, 200.0);
    let steps = 120_000;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let load = DMatrix::from_fn(1, steps, |_, _| normal.sample(&mut rng));
    let r = newmark(&sdof(f, zeta), &load, 1.0 / fs, NewmarkParams::default()).unwrap();
    let q: Vec<f64> = r.displacement.row(0).iter().copied().collect();
    let sig = rdt(&q, fs, f, &IdentifyConfig::default()).unwrap();
    let fit = fit_damping(&sig, 5).unwrap();
    assert!(((fit.damping_ratio - zeta) / zeta).abs() < 0.2, "zeta {}", fit.damping_ratio);

    let crossings = sig.windows(2).filter(|w| w[0] < 0.0 && w[1] >= 0.0).count() as f64;
    let f_est = crossings / (sig.len() as f64 / fs);
    assert!((f_est - f).abs() < 0.5, "signature frequency {f_est}");
}
