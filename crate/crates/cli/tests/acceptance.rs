//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The desk-scale criteria (6, 9, 10) share one pipeline run kept under the
//! cargo target tmpdir (or `TRUSSMODAL_ACCEPTANCE_DIR`). A run whose stage
//! manifests carry the current configuration digest is reused, since the
//! pipeline reproduces bit for bit; anything else is rebuilt from scratch.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use trussmodal_cli::artifacts::{read_json, read_manifest};
use trussmodal_cli::pipeline::{self, AblationSummary, GraphDecomposition, MethodResult};
use trussmodal_cli::{Ablation, RunConfig, Stage, Workspace};
use trussmodal_core::baselines::{cross_psd, efdd_identify, ssi_identify, BaselineConfig};
use trussmodal_core::fem::{self, NewmarkParams, SimulationConfig, SystemMatrices};
use trussmodal_core::graphdata::{self, AttributedGraph, DatasetInfo, Split};
use trussmodal_core::identify::{fit_damping, mac, rdt, IdentifyConfig};
use trussmodal_core::population::{generate_population, Support, TrapezoidSpec, TrussSpec};
use trussmodal_core::sensing::{self, SensingConfig};
use trussmodal_nn::network::{GraphInput, Model, ModelConfig};
use trussmodal_nn::tape::Tape;
use trussmodal_nn::training::{evaluate, gradient_check, loss_on_tape, tiny_graph, LossWeights};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

/// Node 1 free, nodes 0 and 2 pinned: two bars meeting at an apex.
fn two_dof_truss() -> TrussSpec {
    TrussSpec {
        node_coords: vec![(0.0, 0.0), (1.2, 1.6), (4.0, 0.0)],
        edges: vec![(0, 1), (1, 2)],
        supports: vec![Support { node: 0, fixed_x: true, fixed_y: true }, Support { node: 2, fixed_x: true, fixed_y: true }],
        youngs_modulus_pa: 2.0e11,
        density_kg_m3: 7850.0,
        area_m2: 0.01,
        population_id: 0,
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let t = two_dof_truss();
    let (e, a, rho) = (t.youngs_modulus_pa, t.area_m2, t.density_kg_m3);
    // Hand assembly at the free node: K = sum EA/L c c^T, consistent mass
    // puts 2/6 of each bar's mass on each translational DOF.
    let mut k = [[0.0; 2]; 2];
    let mut m = 0.0;
    for &(i, j) in &t.edges {
        let (p, q) = (t.node_coords[i], t.node_coords[j]);
        let (dx, dy) = (q.0 - p.0, q.1 - p.1);
        let l = dx.hypot(dy);
        let c = [dx / l, dy / l];
        for r in 0..2 {
            for s in 0..2 {
                k[r][s] += e * a / l * c[r] * c[s];
            }
        }
        m += rho * a * l / 3.0;
    }
    let tr = k[0][0] + k[1][1];
    let disc = ((k[0][0] - k[1][1]).powi(2) + 4.0 * k[0][1] * k[0][1]).sqrt();
    let closed: Vec<f64> = [(tr - disc) / 2.0, (tr + disc) / 2.0].iter().map(|lam| (lam / m).sqrt() / (2.0 * PI)).collect();
    let (sys, _) = fem::assemble(&t).map_err(|e| e.to_string())?;
    let solved = fem::eigen(&sys.k, &sys.m, 2).map_err(|e| e.to_string())?.frequencies_hz();
    let eig_err = closed.iter().zip(&solved).map(|(c, s)| ((c - s) / c).abs()).fold(0.0, f64::max);

    let (f, zeta, dt) = (1.0, 0.02, 0.005);
    let w = 2.0 * PI * f;
    let sdof = SystemMatrices { k: DMatrix::from_element(1, 1, w * w), m: DMatrix::from_element(1, 1, 1.0), c: DMatrix::from_element(1, 1, 2.0 * zeta * w) };
    let steps = 401;
    let r = fem::newmark_from(&sdof, &DMatrix::zeros(1, steps), dt, NewmarkParams::default(), &DVector::from_element(1, 1.0), &DVector::zeros(1))
        .map_err(|e| e.to_string())?;
    let wd = w * (1.0f64 - zeta * zeta).sqrt();
    let (mut err, mut norm) = (0.0, 0.0);
    for i in 0..steps {
        let tt = i as f64 * dt;
        let exact = (-zeta * w * tt).exp() * ((wd * tt).cos() + zeta * w / wd * (wd * tt).sin());
        err += (r.displacement[(0, i)] - exact).powi(2);
        norm += exact * exact;
    }
    let rms = (err / norm).sqrt();
    let secs = start.elapsed().as_secs_f64();
    ensure(
        eig_err < 1e-9 && rms < 1e-3 && secs < 1.0,
        format!("2-DOF frequencies {:.6}/{:.6} Hz, max rel err {eig_err:.2e}; SDOF free-decay RMS rel err {rms:.2e}; {secs:.3} s", solved[0], solved[1]),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let cfg = RunConfig::full();
    let pop = generate_population(cfg.population.count, &cfg.population.boundary, cfg.population_seed()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for t in &pop {
        let (sys, dofs) = fem::assemble(t).map_err(|e| e.to_string())?;
        let eig = fem::eigen(&sys.k, &sys.m, cfg.simulation.n_reference_modes).map_err(|e| e.to_string())?;
        let (alpha, beta) = fem::rayleigh(eig.omegas[0], eig.omegas[1], cfg.simulation.zeta).map_err(|e| e.to_string())?;
        let reference = fem::modal_reference(&eig, &dofs, alpha, beta);
        for m in 0..2 {
            let w = 2.0 * PI * reference.frequencies_hz[m];
            let direct = alpha / (2.0 * w) + beta * w / 2.0;
            worst = worst.max((direct - 0.01).abs()).max((reference.damping_ratios[m] - 0.01).abs());
        }
    }
    ensure(worst < 1e-10, format!("{} trusses, max |zeta_1,2 - 0.01| = {worst:.2e}", pop.len()))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // Path 0-1-2 with the ends known: A~ = D^-1/2 A D^-1/2 gives
    // x1 = (x0 + x2) / sqrt(2) after one step, fixed thereafter.
    let adj = sensing::adjacency_from_edges(3, &[(0, 1), (1, 2)]).map_err(|e| e.to_string())?;
    let x = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 3.0]);
    let out = sensing::feature_propagate(&x, &[true, false, true], &adj, 40).map_err(|e| e.to_string())?;
    let expected = 2.0 * 2f64.sqrt();
    let path_err = (out[(1, 0)] - expected).abs();
    ok &= path_err < 1e-12;
    notes.push(format!("path example {:.12} vs 2*sqrt(2), err {path_err:.1e}", out[(1, 0)]));

    let cfg = RunConfig::full();
    let pop = generate_population(cfg.population.count, &cfg.population.boundary, cfg.population_seed()).map_err(|e| e.to_string())?;
    let Some((idx, truss)) = pop.iter().enumerate().find(|(_, t)| t.n_nodes() == 25) else {
        return Err("no 25-node truss in the population".into());
    };
    let (history, _) = fem::simulate(truss, &cfg.simulation, 3).map_err(|e| e.to_string())?;
    let (filtered, _) = sensing::filtered_measurements(&history, &cfg.sensing).map_err(|e| e.to_string())?;
    let mask = sensing::select_sensors(truss, cfg.sensing.keep_fraction).map_err(|e| e.to_string())?;
    let mut masked = filtered.clone();
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            masked.row_mut(i).fill(0.0);
        }
    }
    let adj = sensing::normalized_adjacency(truss).map_err(|e| e.to_string())?;
    let prop = sensing::feature_propagate_traced(&masked, &mask, &adj, 40).map_err(|e| e.to_string())?;
    let preserved =
        mask.iter().enumerate().filter(|(_, &m)| m).all(|(i, _)| prop.signals.row(i).iter().zip(masked.row(i).iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    ok &= preserved;
    notes.push(format!("known rows bit-exact: {preserved}"));
    let data_max = masked.amax();
    let delta = prop.deltas[39] / data_max;
    ok &= delta < 1e-6;
    notes.push(format!("truss {idx} (N=25) delta at iteration 40 = {delta:.2e} of data max (need < 1e-6)"));
    ensure(ok, notes.join("; "))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let (fs, len) = (200.0, 2000);
    let freqs = [3.0, 7.0, 11.0];
    let phases = [0.0, 0.4, 1.0];
    // Unit-variance sines over whole periods.
    let q = DMatrix::from_fn(3, len, |i, k| 2f64.sqrt() * (2.0 * PI * freqs[i] * k as f64 / fs + phases[i]).sin());
    let phi = DMatrix::from_row_slice(4, 3, &[1.0, 0.5, -0.2, 0.8, -1.0, 0.3, 0.4, 0.2, 1.0, -0.3, 0.9, 0.6]);
    let x = &phi * &q;
    let mut t = Tape::new();
    let (qv, pv) = (t.leaf(q), t.leaf(phi));
    let l = loss_on_tape(&mut t, qv, pv, &x, LossWeights::default()).read(&t);
    let terms = [l.reconstruction, l.time_independence, l.frequency_independence];
    let terms_ok = terms.iter().all(|v| *v < 1e-6);

    let config = ModelConfig { n_modes: 3, input_len: 64, hidden_dim: 8, n_inducing_points: 4, n_attention_heads: 2, subset_size: 3, ..ModelConfig::default() };
    let model = Model::new(config, 4).map_err(|e| e.to_string())?;
    let report = gradient_check(&model, &tiny_graph(5, 64, 21), LossWeights::default(), 4, 1e-4, 9).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        terms_ok && report.passed() && secs < 30.0,
        format!(
            "loss terms {:.1e}/{:.1e}/{:.1e}; gradient check {} samples, max rel err {:.1e} (tol 1e-4); {secs:.1} s",
            terms[0],
            terms[1],
            terms[2],
            report.samples.len(),
            report.max_relative_error()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn random_graph(rng: &mut ChaCha8Rng, n: usize, len: usize) -> GraphInput {
    let mut groups: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
    let link = |a: usize, b: usize, groups: &mut Vec<Vec<usize>>| {
        if a != b && !groups[a].contains(&b) {
            groups[a].push(b);
            groups[b].push(a);
        }
    };
    for v in 1..n {
        let u = rng.random_range(0..v);
        link(u, v, &mut groups);
    }
    for _ in 0..n {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        link(a, b, &mut groups);
    }
    groups.iter_mut().for_each(|g| g.sort_unstable());
    GraphInput {
        signals: DMatrix::from_fn(n, len, |_, _| rng.random_range(-1.0..1.0)),
        groups,
        coords: (0..n).map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..2.0))).collect(),
        mask: (0..n).map(|_| rng.random_bool(0.5)).collect(),
    }
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_5() -> Outcome {
    let len = 96;
    let model = Model::new(ModelConfig { n_modes: 5, input_len: len, hidden_dim: 32, ..ModelConfig::default() }, 7).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut dq, mut dphi, mut dl) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let n = rng.random_range(5..32);
        let g = random_graph(&mut rng, n, len);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pg = g.permuted(&perm);
        let (q, phi, _) = model.raw(&g).map_err(|e| e.to_string())?;
        let (pq, pphi, _) = model.raw(&pg).map_err(|e| e.to_string())?;
        dq = dq.max(max_abs_diff(&q, &pq));
        let expected = DMatrix::from_fn(n, phi.ncols(), |r, c| phi[(perm[r], c)]);
        dphi = dphi.max(max_abs_diff(&expected, &pphi));
        let w = LossWeights::default();
        let (l, pl) = (evaluate(&model, &g, w).map_err(|e| e.to_string())?, evaluate(&model, &pg, w).map_err(|e| e.to_string())?);
        dl = dl.max((l.total - pl.total).abs());
    }
    ensure(dq < 1e-5 && dphi < 1e-5 && dl < 1e-6, format!("20 graphs: max |dQ| {dq:.1e}, max |dPhi| {dphi:.1e}, max |dLoss| {dl:.1e}"))
}

// ---------------------------------------------------------------- 6, 9, 10

struct DeskRun {
    cfg: RunConfig,
    graphs: Vec<AttributedGraph>,
    main: MethodResult,
    baselines: Vec<MethodResult>,
    ablation: AblationSummary,
    ablation_decomps: Vec<(String, Vec<GraphDecomposition>)>,
    minutes: f64,
    reused: bool,
}

fn desk_dir() -> PathBuf {
    std::env::var_os("TRUSSMODAL_ACCEPTANCE_DIR").map(PathBuf::from).unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk"))
}

fn is_current(ws: &Workspace, cfg: &RunConfig) -> bool {
    let digest = cfg.digest();
    [Stage::Identify, Stage::Baseline, Stage::Ablate].iter().map(|s| ws.stage_dir(*s)).all(|d| read_manifest(&d).is_ok_and(|m| m.config_digest == digest))
        && ws.root.join("main_minutes.txt").exists()
}

fn desk_run() -> Result<DeskRun, String> {
    let mut cfg = RunConfig::desk();
    cfg.out_dir = desk_dir();
    let ws = Workspace::new(&cfg.out_dir);
    let reused = is_current(&ws, &cfg);
    if !reused {
        let _ = std::fs::remove_dir_all(&ws.root);
        let start = Instant::now();
        let mut main_cfg = cfg.clone();
        main_cfg.stages = vec![Stage::GenPopulation, Stage::Simulate, Stage::Sense, Stage::Train, Stage::Decompose, Stage::Identify];
        pipeline::run_pipeline(&main_cfg).map_err(|e| e.to_string())?;
        let minutes = start.elapsed().as_secs_f64() / 60.0;
        std::fs::write(ws.root.join("main_minutes.txt"), format!("{minutes}\n")).map_err(|e| e.to_string())?;
        let mut rest = cfg.clone();
        rest.stages = vec![Stage::Baseline, Stage::Ablate, Stage::Report];
        pipeline::run_pipeline(&rest).map_err(|e| e.to_string())?;
    }
    let minutes: f64 = std::fs::read_to_string(ws.root.join("main_minutes.txt")).map_err(|e| e.to_string())?.trim().parse().map_err(|e| format!("{e}"))?;
    let graphs = graphdata::load(ws.dataset()).map_err(|e| e.to_string())?.0;
    let main: MethodResult = read_json(&ws.identification(Ablation::Full), Stage::Identify).map_err(|e| e.to_string())?;
    let baselines =
        ["efdd", "ssi"].iter().map(|m| read_json(&ws.baseline(m), Stage::Baseline).map_err(|e| e.to_string())).collect::<Result<Vec<MethodResult>, _>>()?;
    let ablation: AblationSummary = read_json(&ws.ablation_summary(), Stage::Ablate).map_err(|e| e.to_string())?;
    let ablation_decomps = Ablation::ALL
        .iter()
        .map(|a| read_json(&ws.decomposition(*a), Stage::Decompose).map(|d| (a.name().to_string(), d)).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DeskRun { cfg, graphs, main, baselines, ablation, ablation_decomps, minutes, reused })
}

fn desk() -> Result<&'static DeskRun, String> {
    static RUN: OnceLock<Result<DeskRun, String>> = OnceLock::new();
    RUN.get_or_init(desk_run).as_ref().map_err(|e| format!("desk pipeline failed: {e}"))
}

fn mac_oracle(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    ab * ab / (aa * bb)
}

/// Per reference mode, the recomputed MAC and frequency error of every
/// train match of `r`, cross-checked against the stored values.
struct Graded {
    mac: Vec<Vec<f64>>,
    freq_err: Vec<Vec<f64>>,
    mode1_zeta: Vec<f64>,
}

fn grade(r: &MethodResult, graphs: &[AttributedGraph], n: usize) -> Result<Graded, String> {
    let mut g = Graded { mac: vec![Vec::new(); n], freq_err: vec![Vec::new(); n], mode1_zeta: Vec::new() };
    for s in r.report.structures.iter().filter(|s| s.split == Split::Train) {
        let graph = graphs.iter().find(|x| x.id == s.graph_id).ok_or("unknown graph")?;
        let ident = r.structures.iter().find(|x| x.graph_id == s.graph_id).ok_or("missing identification")?;
        let reference = graph.reference();
        for m in &s.matches {
            let mode = ident.modes.iter().find(|x| x.source_index == m.identified_index).ok_or("matched mode missing")?;
            let true_shape: Vec<f64> = reference.mode_shapes.column(m.reference_mode).iter().copied().collect();
            let mac = mac_oracle(&mode.mode_shape, &true_shape);
            let err = (mode.frequency_hz - reference.frequencies_hz[m.reference_mode]) / reference.frequencies_hz[m.reference_mode] * 100.0;
            if (mac - m.mac).abs() > 1e-9 || (err - m.frequency_error_pct).abs() > 1e-9 {
                return Err(format!("{} graph {}: stored MAC/error disagree with recomputation", r.method, s.graph_id));
            }
            g.mac[m.reference_mode].push(mac);
            g.freq_err[m.reference_mode].push(err.abs());
            if m.reference_mode == 0 {
                g.mode1_zeta.extend(mode.damping_ratio);
            }
        }
    }
    Ok(g)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "none".into())
}

fn criterion_6() -> Outcome {
    let d = desk()?;
    let c = &d.cfg;
    let setup_ok = c.population.count == 10 && c.model.input_len == 1000 && c.model.n_modes == 5 && (500..=1500).contains(&c.train.epochs);
    let g = grade(&d.main, &d.graphs, c.n_target_modes)?;
    let (mac1, mac2) = (mean(&g.mac[0]), mean(&g.mac[1]));
    let (e1, e2) = (mean(&g.freq_err[0]), mean(&g.freq_err[1]));
    let zeta = mean(&g.mode1_zeta);
    let zeta_ok = !g.mode1_zeta.is_empty() && g.mode1_zeta.iter().all(|z| *z > 0.0) && zeta.is_some_and(|z| (0.01 / 3.0..=0.03).contains(&z));
    let ok = setup_ok
        && d.minutes <= 30.0
        && mac1.is_some_and(|v| v >= 0.90)
        && mac2.is_some_and(|v| v >= 0.75)
        && e1.is_some_and(|v| v <= 3.0)
        && e2.is_some_and(|v| v <= 3.0)
        && zeta_ok;
    ensure(
        ok,
        format!(
            "train MAC mode1 {} (>=0.90, n={}), mode2 {} (>=0.75, n={}); |freq err| {} % / {} % (<=3); mode-1 zeta mean {} over {}; main path {:.1} min{}",
            fmt(mac1),
            g.mac[0].len(),
            fmt(mac2),
            g.mac[1].len(),
            fmt(e1),
            fmt(e2),
            fmt(zeta),
            g.mode1_zeta.len(),
            d.minutes,
            if d.reused { " (reused run)" } else { "" }
        ),
    )
}

fn criterion_9() -> Outcome {
    let d = desk()?;
    let n = d.cfg.n_target_modes;
    let own = grade(&d.main, &d.graphs, n)?;
    let Some(top) = (0..n).rev().find(|&m| !own.mac[m].is_empty()) else {
        return Err("proposed method identified no mode".into());
    };
    let own_mac = mean(&own.mac[top]).unwrap_or(0.0);
    let mut parts = vec![format!("mode {}: proposed {own_mac:.4}", top + 1)];
    let mut ok = true;
    for b in &d.baselines {
        let v = mean(&grade(b, &d.graphs, n)?.mac[top]).unwrap_or(0.0);
        ok &= own_mac >= v;
        parts.push(format!("{} {v:.4}", b.method));
    }
    ensure(ok, parts.join(", "))
}

fn offdiag_mean_abs_corr(q: &DMatrix<f64>) -> f64 {
    let p = q.nrows();
    let rows: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            let r: Vec<f64> = q.row(i).iter().copied().collect();
            let m = r.iter().sum::<f64>() / r.len() as f64;
            r.iter().map(|v| v - m).collect()
        })
        .collect();
    let mut s = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                let num: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let den = (rows[i].iter().map(|a| a * a).sum::<f64>() * rows[j].iter().map(|b| b * b).sum::<f64>()).sqrt();
                s += (num / den).abs();
            }
        }
    }
    s / (p * (p - 1)) as f64
}

fn criterion_10() -> Outcome {
    let d = desk()?;
    let n = d.cfg.n_target_modes;
    let mut mac1 = Vec::new();
    for row in &d.ablation.rows {
        let result: MethodResult = if row.method == "full" {
            d.main.clone()
        } else {
            let a = Ablation::ALL.iter().find(|a| a.name() == row.method).ok_or("unknown variant")?;
            read_json(&Workspace::new(&d.cfg.out_dir).identification(*a), Stage::Identify).map_err(|e| e.to_string())?
        };
        mac1.push((row.method.clone(), mean(&grade(&result, &d.graphs, n)?.mac[0]).unwrap_or(0.0)));
    }
    let mixing: Vec<(String, f64)> = d
        .ablation_decomps
        .iter()
        .map(|(name, decs)| {
            let v: Vec<f64> = decs.iter().filter(|x| x.split == Split::Train).map(|x| offdiag_mean_abs_corr(&x.result.modal_responses)).collect();
            (name.clone(), mean(&v).unwrap_or(f64::NAN))
        })
        .collect();
    let full = mac1.iter().find(|(n, _)| n == "full").map(|x| x.1).unwrap_or(0.0);
    let best_ok = mac1.len() == 4 && mac1.iter().all(|(_, v)| full >= *v);
    let ni = mixing.iter().find(|(n, _)| n == "no_independence").map(|x| x.1).unwrap_or(f64::NAN);
    let worst_ok = mixing.len() == 4 && mixing.iter().all(|(_, v)| ni >= *v);
    let show = |v: &[(String, f64)]| v.iter().map(|(n, x)| format!("{n} {x:.4}")).collect::<Vec<_>>().join(", ");
    ensure(best_ok && worst_ok, format!("mode-1 MAC: {}; mode mixing: {}", show(&mac1), show(&mixing)))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let (f, fs) = (4.0, 200.0);
    let mut worst: f64 = 0.0;
    for zeta in [0.005, 0.01, 0.02, 0.05] {
        let w = 2.0 * PI * f;
        let wd = w * (1.0f64 - zeta * zeta).sqrt();
        let sig: Vec<f64> = (0..2000)
            .map(|i| {
                let t = i as f64 / fs;
                (-zeta * w * t).exp() * (wd * t).cos()
            })
            .collect();
        let fit = fit_damping(&sig, 5).map_err(|e| e.to_string())?;
        worst = worst.max(((fit.damping_ratio - zeta) / zeta).abs());
    }

    let zeta = 0.01;
    let w = 2.0 * PI * f;
    let sdof = SystemMatrices { k: DMatrix::from_element(1, 1, w * w), m: DMatrix::from_element(1, 1, 1.0), c: DMatrix::from_element(1, 1, 2.0 * zeta * w) };
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut estimates = Vec::new();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let load = DMatrix::from_fn(1, 120_000, |_, _| normal.sample(&mut rng));
        let r = fem::newmark(&sdof, &load, 1.0 / fs, NewmarkParams::default()).map_err(|e| e.to_string())?;
        let q: Vec<f64> = r.displacement.row(0).iter().copied().collect();
        let sig = rdt(&q, fs, f, &IdentifyConfig::default()).ok_or("too few RDT triggers")?;
        estimates.push(fit_damping(&sig, 5).map_err(|e| e.to_string())?.damping_ratio);
    }
    let random_err = estimates.iter().map(|z| ((z - zeta) / zeta).abs()).fold(0.0, f64::max);
    let shown: Vec<String> = estimates.iter().map(|z| format!("{z:.5}")).collect();
    ensure(
        worst < 0.05 && random_err < 0.2,
        format!("analytic decays max rel err {worst:.3} (<0.05); random SDOF zeta over 5 realizations {}, max rel err {random_err:.3} (<0.2)", shown.join("/")),
    )
}

// ---------------------------------------------------------------- 8

fn exact_transition(f: f64, zeta: f64, dt: f64) -> (Matrix2<f64>, Vector2<f64>) {
    let w = 2.0 * PI * f;
    let wd = w * (1.0 - zeta * zeta).sqrt();
    let e = (-zeta * w * dt).exp();
    let (s, c) = (wd * dt).sin_cos();
    let phi = Matrix2::new(e * (c + zeta * w / wd * s), e * s / wd, -e * w * w / wd * s, e * (c - zeta * w / wd * s));
    let a_inv = Matrix2::new(-2.0 * zeta / w, -1.0 / (w * w), 1.0, 0.0);
    (phi, a_inv * (phi - Matrix2::identity()) * Vector2::new(0.0, 1.0))
}

fn criterion_8() -> Outcome {
    let (fs, freqs, zeta) = (50.0, [2.0, 5.0], 0.01);
    let shapes = [[0.5, 1.0, 0.6], [1.0, 0.1, -0.8]];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let systems: Vec<_> = freqs.iter().map(|&f| exact_transition(f, zeta, 1.0 / fs)).collect();
    let mut states = [Vector2::zeros(); 2];
    let n = 30_000;
    let mut y = DMatrix::zeros(3, n);
    for t in 0..n {
        for (k, (a, b)) in systems.iter().enumerate() {
            states[k] = a * states[k] + b * normal.sample(&mut rng);
            let q = states[k][0] * (2.0 * PI * freqs[k]).powi(2);
            for ch in 0..3 {
                y[(ch, t)] += shapes[k][ch] * q;
            }
        }
    }
    let cfg = BaselineConfig::default();
    let stack = cross_psd(&y, fs, &cfg).map_err(|e| e.to_string())?;
    let bin = stack.freqs[1];
    let efdd = efdd_identify(&stack, 2, &cfg).map_err(|e| e.to_string())?;
    let ssi = ssi_identify(&y, fs, 2, &BaselineConfig { ssi_order: Some(8), ..cfg }).map_err(|e| e.to_string())?;
    let mut ok = efdd.len() == 2 && ssi.len() == 2;
    let mut parts = Vec::new();
    for (name, modes, tol_hz) in [("EFDD", &efdd, None), ("SSI", &ssi, Some(0.01))] {
        for (m, (&f, shape)) in modes.iter().zip(freqs.iter().zip(shapes)) {
            let within = match tol_hz {
                None => (m.frequency_hz - f).abs() <= bin,
                Some(rel) => ((m.frequency_hz - f) / f).abs() < rel,
            };
            let mac = mac(&m.shape, &shape).map_err(|e| e.to_string())?;
            ok &= within && mac >= 0.99;
            parts.push(format!("{name} {:.4} Hz MAC {mac:.4}", m.frequency_hz));
        }
    }
    ensure(ok, format!("{} (EFDD bin {bin:.4} Hz)", parts.join(", ")))
}

// ---------------------------------------------------------------- 11

fn criterion_11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = true;
    for _ in 0..100 {
        let a: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        ok &= mac(&a, &a).unwrap() == 1.0;
        let base = mac(&a, &b).unwrap();
        for c in [-1.0, 2.0, -0.25, 1024.0] {
            let sb: Vec<f64> = b.iter().map(|v| v * c).collect();
            let sa: Vec<f64> = a.iter().map(|v| v * c).collect();
            ok &= mac(&a, &sb).unwrap() == base && mac(&sa, &b).unwrap() == base;
        }
        // Orthogonal complement of a within span{a, b}.
        let k = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / a.iter().map(|x| x * x).sum::<f64>();
        let o: Vec<f64> = b.iter().zip(&a).map(|(y, x)| y - k * x).collect();
        ok &= mac(&a, &o).unwrap() < 1e-28;
    }
    ok &= mac(&[1.0, 0.0, 0.0], &[0.0, 3.0, -2.0]).unwrap() == 0.0;
    ensure(ok, "identity -> 1 exactly, orthogonal -> 0, sign and power-of-two scaling leave MAC bit-identical (100 random pairs)".into())
}

// ---------------------------------------------------------------- 12

fn criterion_12() -> Outcome {
    let counts = graphdata::split_counts(100, [0.8, 0.05, 0.15]).map_err(|e| e.to_string())?;
    let tags = graphdata::split(100, [0.8, 0.05, 0.15], 1).map_err(|e| e.to_string())?;
    let tally = |s: Split| tags.iter().filter(|t| **t == s).count();
    let split_ok =
        (counts.train, counts.validation, counts.test) == (80, 5, 15) && (tally(Split::Train), tally(Split::Validation), tally(Split::Test)) == (80, 5, 15);

    let info = DatasetInfo {
        population_seed: 17,
        boundary: TrapezoidSpec::default(),
        simulation: SimulationConfig::with_steps(256),
        sensing: SensingConfig::default(),
    };
    let graphs = graphdata::build(&info, 4, [0.5, 0.25, 0.25]).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("pop.tmg");
    let saved = graphdata::save(&graphs, &info, &path).map_err(|e| e.to_string())?;
    let (loaded, manifest) = graphdata::load(&path).map_err(|e| e.to_string())?;
    let bits = |m: &DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same = manifest == saved
        && loaded.len() == graphs.len()
        && graphs.iter().zip(&loaded).all(|(a, b)| {
            a.id == b.id
                && a.truss == b.truss
                && a.split == b.split
                && bits(&a.signals.signals) == bits(&b.signals.signals)
                && a.signals.mask == b.signals.mask
                && a.signals.fs_hz.to_bits() == b.signals.fs_hz.to_bits()
                && a.signals.normalization_scale.to_bits() == b.signals.normalization_scale.to_bits()
                && a.reference() == b.reference()
        });
    let resaved = dir.path().join("again.tmg");
    graphdata::save(&loaded, &info, &resaved).map_err(|e| e.to_string())?;
    let bytes_equal = std::fs::read(&path).map_err(|e| e.to_string())? == std::fs::read(&resaved).map_err(|e| e.to_string())?;
    ensure(
        split_ok && same && bytes_equal,
        format!(
            "split 100 -> {}/{}/{}; 4-graph save/load bit-exact {same}, re-save byte-identical {bytes_equal}",
            counts.train, counts.validation, counts.test
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(u8, &str, fn() -> Outcome); 12] = [
        (1, "FEM oracle", criterion_1),
        (2, "Rayleigh identity", criterion_2),
        (3, "feature propagation", criterion_3),
        (4, "loss correctness", criterion_4),
        (5, "permutation contract", criterion_5),
        (6, "desk-scale end-to-end", criterion_6),
        (7, "RDT oracle", criterion_7),
        (8, "baseline oracle", criterion_8),
        (9, "method ordering", criterion_9),
        (10, "ablation ordering", criterion_10),
        (11, "MAC properties", criterion_11),
        (12, "dataset round-trip", criterion_12),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id:>2} {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id:>2} {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
