//! Pass/fail checks on the outcome of a run: identification quality of the
//! trained model, ordering against the baselines and among the ablations.

use std::fmt;

use crate::pipeline::{AblationSummary, MethodResult, MethodSummary};

pub const MODE1_MIN_MAC: f64 = 0.90;
pub const MODE2_MIN_MAC: f64 = 0.75;
pub const MAX_ABS_FREQUENCY_ERROR_PCT: f64 = 3.0;
/// Mode-1 damping must lie within this factor of the simulated value.
pub const DAMPING_FACTOR: f64 = 3.0;
pub const SIMULATED_DAMPING: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn show(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "none".into())
}

/// Train-split accuracy of the proposed model.
pub fn quality(s: &MethodSummary) -> Vec<Check> {
    let mac = |m: usize| s.train_mac.get(m).copied().flatten();
    let err = |m: usize| s.train_abs_frequency_error_pct.get(m).copied().flatten();
    let mut out = vec![
        Check {
            name: "mode-1 mean MAC".into(),
            passed: mac(0).is_some_and(|v| v >= MODE1_MIN_MAC),
            detail: format!("{} (need >= {MODE1_MIN_MAC})", show(mac(0))),
        },
        Check {
            name: "mode-2 mean MAC".into(),
            passed: mac(1).is_some_and(|v| v >= MODE2_MIN_MAC),
            detail: format!("{} (need >= {MODE2_MIN_MAC})", show(mac(1))),
        },
    ];
    for m in 0..2 {
        out.push(Check {
            name: format!("mode-{} mean |frequency error|", m + 1),
            passed: err(m).is_some_and(|v| v <= MAX_ABS_FREQUENCY_ERROR_PCT),
            detail: format!("{} % (need <= {MAX_ABS_FREQUENCY_ERROR_PCT})", show(err(m))),
        });
    }
    let z = s.train_mode1_damping;
    out.push(Check {
        name: "mode-1 damping".into(),
        passed: z.is_some_and(|z| (SIMULATED_DAMPING / DAMPING_FACTOR..=SIMULATED_DAMPING * DAMPING_FACTOR).contains(&z)),
        detail: format!("mean {} over {} structures (need within x{DAMPING_FACTOR} of {SIMULATED_DAMPING})", show(z), s.train_mode1_damping_count),
    });
    out
}

/// The proposed model's mean MAC for its highest identified mode against
/// each baseline; a baseline without matches for that mode counts as 0.
pub fn method_ordering(proposed: &MethodResult, baselines: &[MethodResult]) -> Check {
    let s = &proposed.summary;
    let Some(top) = s.highest_matched_mode else {
        return Check { name: "method ordering".into(), passed: false, detail: "proposed method matched no mode".into() };
    };
    let own = s.train_mac[top - 1].unwrap_or(0.0);
    let others: Vec<(String, f64)> = baselines.iter().map(|b| (b.method.clone(), b.summary.train_mac.get(top - 1).copied().flatten().unwrap_or(0.0))).collect();
    let passed = !others.is_empty() && others.iter().all(|(_, v)| own >= *v);
    let detail = std::iter::once(format!("mode {top}: {} {own:.4}", proposed.method))
        .chain(others.iter().map(|(n, v)| format!("{n} {v:.4}")))
        .collect::<Vec<_>>()
        .join(", ");
    Check { name: "method ordering".into(), passed, detail }
}

/// Full variant first on mode-1 MAC; the variant without independence
/// terms worst on mode separation.
pub fn ablation_ordering(a: &AblationSummary) -> Vec<Check> {
    let full = a.rows.iter().find(|r| r.method == "full");
    let mac1 = |r: &MethodSummary| r.train_mac.first().copied().flatten().unwrap_or(0.0);
    let table = a.rows.iter().map(|r| format!("{} {:.4}", r.method, mac1(r))).collect::<Vec<_>>().join(", ");
    let best = Check {
        name: "ablation: full best mode-1 MAC".into(),
        passed: full.is_some_and(|f| a.rows.len() > 1 && a.rows.iter().all(|r| mac1(f) >= mac1(r))),
        detail: table,
    };
    let mixing = |r: &MethodSummary| r.train_mode_mixing.unwrap_or(f64::NAN);
    let ni = a.rows.iter().find(|r| r.method == "no_independence");
    let table = a.rows.iter().map(|r| format!("{} {:.4}", r.method, mixing(r))).collect::<Vec<_>>().join(", ");
    let worst = Check {
        name: "ablation: no_independence most mode mixing".into(),
        passed: ni.is_some_and(|n| a.rows.iter().all(|r| mixing(n) >= mixing(r))),
        detail: table,
    };
    vec![best, worst]
}
