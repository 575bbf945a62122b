//! Pipeline stages. Each stage reads upstream artifacts from the run
//! directory, writes its own and records both in a manifest.

use std::collections::BTreeMap;

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use trussmodal_core::baselines::{cross_psd, efdd_identify, ssi_identify, to_identified};
use trussmodal_core::fem::{self, ModalReference, TimeHistory};
use trussmodal_core::graphdata::{self, AttributedGraph, DatasetInfo, Split};
use trussmodal_core::identify::{characterise, match_and_report, psd, spurious_filter, IdentificationReport, IdentifiedMode, Metric, StructureIdentification};
use trussmodal_core::population::{self, TrussSpec};
use trussmodal_core::{seed, sensing};
use trussmodal_nn::checkpoint::Checkpoint;
use trussmodal_nn::network::{DecompositionResult, GraphInput};
use trussmodal_nn::training::{self, mode_mixing, EpochRecord};

use crate::artifacts::{read_json, StageRecorder, Workspace};
use crate::config::{Ablation, RunConfig, Stage};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub id: usize,
    pub history: TimeHistory,
    pub reference: ModalReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDecomposition {
    pub graph_id: usize,
    pub split: Split,
    pub result: DecompositionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: Ablation,
    pub epochs: usize,
    pub first_train_loss: f64,
    pub final_train_loss: f64,
    pub final_validation_loss: Option<f64>,
    pub best_epoch: usize,
    pub n_parameters: usize,
}

/// Headline numbers of one identification method over the train split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Mean MAC per reference mode (train split).
    pub train_mac: Vec<Option<f64>>,
    /// Mean absolute frequency error in percent per reference mode.
    pub train_abs_frequency_error_pct: Vec<Option<f64>>,
    pub held_out_mac: Vec<Option<f64>>,
    /// Mean identified damping ratio of mode 1 over train structures that
    /// produced a valid estimate, and how many did.
    pub train_mode1_damping: Option<f64>,
    pub train_mode1_damping_count: usize,
    /// Mean off-diagonal `|R(Q)|` over train structures (network methods).
    pub train_mode_mixing: Option<f64>,
    /// Highest reference mode with at least one train match.
    pub highest_matched_mode: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub structures: Vec<StructureIdentification>,
    /// Graph ids where no mode survived (decomposition or fit failed).
    pub failed: Vec<usize>,
    pub report: IdentificationReport,
    pub summary: MethodSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub rows: Vec<MethodSummary>,
}

impl AblationSummary {
    pub fn csv(&self) -> String {
        let n = self.rows.iter().map(|r| r.train_mac.len()).max().unwrap_or(0);
        let mut out = String::from("variant");
        for m in 1..=n {
            out.push_str(&format!(",mode{m}_mac"));
        }
        for m in 1..=n {
            out.push_str(&format!(",mode{m}_abs_frequency_error_pct"));
        }
        out.push_str(",mode_mixing\n");
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&r.method);
            for m in 0..n {
                out.push_str(&format!(",{}", cell(r.train_mac.get(m).copied().flatten())));
            }
            for m in 0..n {
                out.push_str(&format!(",{}", cell(r.train_abs_frequency_error_pct.get(m).copied().flatten())));
            }
            out.push_str(&format!(",{}\n", cell(r.train_mode_mixing)));
        }
        out
    }
}

pub fn dataset_info(cfg: &RunConfig) -> DatasetInfo {
    DatasetInfo {
        population_seed: cfg.population_seed(),
        boundary: cfg.population.boundary.clone(),
        simulation: cfg.simulation.clone(),
        sensing: cfg.sensing.clone(),
    }
}

pub fn gen_population(cfg: &RunConfig, ws: &Workspace) -> Result<Vec<TrussSpec>> {
    let mut rec = StageRecorder::new(ws, Stage::GenPopulation, ws.stage_dir(Stage::GenPopulation))?;
    let trusses = population::generate_population(cfg.population.count, &cfg.population.boundary, cfg.population_seed())?;
    info!("generated {} trusses", trusses.len());
    rec.write_json("population.json", &trusses)?;
    rec.finish(cfg)?;
    Ok(trusses)
}

pub fn simulate(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let mut rec = StageRecorder::new(ws, Stage::Simulate, ws.stage_dir(Stage::Simulate))?;
    let trusses: Vec<TrussSpec> = read_json(&rec.input(&ws.population(), Stage::GenPopulation)?, Stage::GenPopulation)?;
    let excitation = seed::derive_named(cfg.population_seed(), "excitation");
    let records = trusses
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (history, reference) = fem::simulate(t, &cfg.simulation, seed::derive(excitation, i as u64))?;
            Ok(SimulationRecord { id: i, history, reference })
        })
        .collect::<Result<Vec<_>>>()?;
    info!("simulated {} records of {} steps", records.len(), cfg.simulation.n_steps);
    rec.write("records.json", serde_json::to_vec(&records)?)?;
    rec.finish(cfg)?;
    Ok(())
}

pub fn sense(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let mut rec = StageRecorder::new(ws, Stage::Sense, ws.stage_dir(Stage::Sense))?;
    let trusses: Vec<TrussSpec> = read_json(&rec.input(&ws.population(), Stage::GenPopulation)?, Stage::GenPopulation)?;
    let records: Vec<SimulationRecord> = read_json(&rec.input(&ws.simulation(), Stage::Simulate)?, Stage::Simulate)?;
    if records.len() != trusses.len() {
        return Err(CliError::stage("sense", format!("{} records for {} trusses", records.len(), trusses.len())));
    }
    let tags = graphdata::split(trusses.len(), cfg.population.split_fractions, seed::derive_named(cfg.population_seed(), "split"))?;
    let graphs = trusses
        .into_iter()
        .zip(records)
        .zip(tags)
        .map(|((truss, r), tag)| {
            let signals = sensing::sense(&r.history, &truss, &cfg.sensing)?;
            Ok(AttributedGraph::new(r.id, truss, signals, r.reference, tag)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let path = ws.dataset();
    let manifest = graphdata::save(&graphs, &dataset_info(cfg), &path)?;
    rec.output(&path)?;
    info!("dataset: {} train / {} validation / {} test", manifest.counts.train, manifest.counts.validation, manifest.counts.test);
    rec.finish(cfg)?;
    Ok(())
}

fn load_dataset(rec: &mut StageRecorder<'_>, ws: &Workspace) -> Result<Vec<AttributedGraph>> {
    let path = rec.input(&ws.dataset(), Stage::Sense)?;
    Ok(graphdata::load(path)?.0)
}

pub fn train(cfg: &RunConfig, ws: &Workspace, ablation: Ablation, mut progress: impl FnMut(&EpochRecord)) -> Result<TrainSummary> {
    let dir = ws.model_root(ablation).join("train");
    let mut rec = StageRecorder::new(ws, Stage::Train, dir)?;
    let graphs = load_dataset(&mut rec, ws)?;
    let model_config = cfg.model_config(ablation);
    let train_config = cfg.train_config(ablation);
    let outcome = training::train(&graphs, &model_config, &train_config, &mut progress).map_err(|e| CliError::stage("train", e))?;
    if graphs.iter().any(|g| g.reference_reads() > 0) {
        return Err(CliError::stage("train", "training read reference modal data"));
    }
    let log = &outcome.log;
    let last = log.records.last().expect("training ran at least one epoch");
    let summary = TrainSummary {
        variant: ablation,
        epochs: log.epochs(),
        first_train_loss: log.records[0].train.total,
        final_train_loss: last.train.total,
        final_validation_loss: last.validation.map(|v| v.total),
        best_epoch: outcome.best_epoch,
        n_parameters: outcome.model.params.n_scalars(),
    };
    let ck = Checkpoint::from_model(&outcome.model, train_config.seed, log.epochs());
    rec.write("checkpoint.json", serde_json::to_vec(&ck)?)?;
    let best = Checkpoint::from_model(&outcome.best, train_config.seed, outcome.best_epoch);
    rec.write("best_checkpoint.json", serde_json::to_vec(&best)?)?;
    rec.write_volatile("train_log.csv", log.to_csv())?;
    rec.write("losses.csv", loss_table(log))?;
    rec.write_json("summary.json", &summary)?;
    rec.finish(cfg)?;
    Ok(summary)
}

/// Loss history without wall-clock columns, reproducible bit for bit.
fn loss_table(log: &training::TrainLog) -> String {
    let mut out = String::from("epoch,train_loss,validation_loss\n");
    for r in &log.records {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train.total, r.validation.map(|v| v.total.to_string()).unwrap_or_default()));
    }
    out
}

pub fn decompose(cfg: &RunConfig, ws: &Workspace, ablation: Ablation) -> Result<Vec<GraphDecomposition>> {
    let dir = ws.model_root(ablation).join("decompose");
    let mut rec = StageRecorder::new(ws, Stage::Decompose, dir)?;
    let graphs = load_dataset(&mut rec, ws)?;
    let ck_path = rec.input(&ws.checkpoint(ablation), Stage::Train)?;
    let model = Checkpoint::load(&ck_path)?.into_model()?;
    let out = graphs
        .iter()
        .map(|g| {
            let result = model.decompose(&GraphInput::new(&g.truss, &g.signals)).map_err(|e| CliError::stage("decompose", format!("graph {}: {e}", g.id)))?;
            Ok(GraphDecomposition { graph_id: g.id, split: g.split, result })
        })
        .collect::<Result<Vec<_>>>()?;
    rec.write("decomposition.json", serde_json::to_vec(&out)?)?;
    rec.finish(cfg)?;
    Ok(out)
}

/// Characterise and filter one decomposition; `None` when nothing survives.
pub fn identify_structure(d: &GraphDecomposition, fs: f64, cfg: &RunConfig) -> Result<Option<Vec<IdentifiedMode>>> {
    let r = &d.result;
    let candidates = characterise(&r.modal_responses, &r.mode_shapes, fs, &cfg.identify)?;
    let q: Vec<f64> = r.modal_responses.row(0).iter().copied().collect();
    let bin = psd(&q, fs)?.resolution();
    match spurious_filter(&candidates, bin, cfg.n_target_modes, &cfg.identify) {
        Ok(modes) => Ok(Some(modes)),
        Err(e) => {
            warn!("graph {}: {e}", d.graph_id);
            Ok(None)
        }
    }
}

fn summarize(method: &str, report: &IdentificationReport, structures: &[StructureIdentification], mixing: Option<f64>) -> MethodSummary {
    let train: &[Split] = &[Split::Train];
    let held: &[Split] = &[Split::Validation, Split::Test];
    let n = report.n_modes;
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let damping: Vec<f64> = report
        .structures
        .iter()
        .filter(|s| s.split == Split::Train)
        .flat_map(|s| s.matches.iter().filter(|m| m.reference_mode == 0))
        .filter_map(|m| m.identified_damping_ratio)
        .collect();
    let _ = structures;
    MethodSummary {
        method: method.into(),
        train_mac: (0..n).map(|m| mean(report.values(m, Metric::Mac, train))).collect(),
        train_abs_frequency_error_pct: (0..n).map(|m| report.mean_abs(m, Metric::FrequencyErrorPct, train)).collect(),
        held_out_mac: (0..n).map(|m| mean(report.values(m, Metric::Mac, held))).collect(),
        train_mode1_damping_count: damping.len(),
        train_mode1_damping: mean(damping),
        train_mode_mixing: mixing,
        highest_matched_mode: (0..n).rev().find(|&m| !report.values(m, Metric::Mac, train).is_empty()).map(|m| m + 1),
    }
}

fn finish_method(
    method: &str,
    graphs: &[AttributedGraph],
    structures: Vec<StructureIdentification>,
    failed: Vec<usize>,
    mixing: Option<f64>,
    cfg: &RunConfig,
) -> Result<MethodResult> {
    let by_id: BTreeMap<usize, &AttributedGraph> = graphs.iter().map(|g| (g.id, g)).collect();
    let refs = structures
        .iter()
        .map(|s| {
            by_id.get(&s.graph_id).map(|g| g.reference()).ok_or_else(|| CliError::stage("identify", format!("graph {} missing from the dataset", s.graph_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = match_and_report(&structures, &refs, cfg.n_target_modes, &cfg.identify)?;
    let summary = summarize(method, &report, &structures, mixing);
    Ok(MethodResult { method: method.into(), structures, failed, report, summary })
}

fn write_method(rec: &mut StageRecorder<'_>, prefix: &str, result: &MethodResult) -> Result<()> {
    rec.write(&format!("{prefix}identification.json"), serde_json::to_vec(result)?)?;
    rec.write(&format!("{prefix}stats.csv"), result.report.stats_csv())?;
    rec.write(&format!("{prefix}matches.csv"), result.report.matches_csv())?;
    rec.write(&format!("{prefix}table.txt"), result.report.format_table())?;
    Ok(())
}

pub fn identify(cfg: &RunConfig, ws: &Workspace, ablation: Ablation) -> Result<MethodResult> {
    let dir = ws.model_root(ablation).join("identify");
    let mut rec = StageRecorder::new(ws, Stage::Identify, dir)?;
    let graphs = load_dataset(&mut rec, ws)?;
    let decomps: Vec<GraphDecomposition> = read_json(&rec.input(&ws.decomposition(ablation), Stage::Decompose)?, Stage::Decompose)?;
    let fs: BTreeMap<usize, f64> = graphs.iter().map(|g| (g.id, g.signals.fs_hz)).collect();
    let mut structures = Vec::new();
    let mut failed = Vec::new();
    let mut mixing = Vec::new();
    for d in &decomps {
        let fs = *fs.get(&d.graph_id).ok_or_else(|| CliError::stage("identify", format!("graph {} missing from the dataset", d.graph_id)))?;
        let modes = identify_structure(d, fs, cfg)?.unwrap_or_else(|| {
            failed.push(d.graph_id);
            Vec::new()
        });
        if d.split == Split::Train {
            mixing.push(mode_mixing(&d.result.modal_responses));
        }
        structures.push(StructureIdentification { graph_id: d.graph_id, split: d.split, modes });
    }
    let mixing = (!mixing.is_empty()).then(|| mixing.iter().sum::<f64>() / mixing.len() as f64);
    let result = finish_method(ablation.name(), &graphs, structures, failed, mixing, cfg)?;
    write_method(&mut rec, "", &result)?;
    rec.finish(cfg)?;
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Efdd,
    Ssi,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 2] = [BaselineMethod::Efdd, BaselineMethod::Ssi];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Efdd => "efdd",
            BaselineMethod::Ssi => "ssi",
        }
    }
}

/// Measured channels of one graph with the x-coordinates of their nodes.
pub fn measured_channels(g: &AttributedGraph) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let measured = g.signals.measured_nodes();
    let x = DMatrix::from_fn(measured.len(), g.signals.n_samples(), |r, c| g.signals.signals[(measured[r], c)]);
    let all_x: Vec<f64> = g.truss.node_coords.iter().map(|c| c.0).collect();
    let measured_x = measured.iter().map(|&i| all_x[i]).collect();
    (x, measured_x, all_x)
}

pub fn run_baseline(method: BaselineMethod, g: &AttributedGraph, cfg: &RunConfig) -> Result<Vec<IdentifiedMode>> {
    let (x, measured_x, all_x) = measured_channels(g);
    let fs = g.signals.fs_hz;
    let modes = match method {
        BaselineMethod::Efdd => efdd_identify(&cross_psd(&x, fs, &cfg.baseline)?, cfg.n_target_modes, &cfg.baseline)?,
        BaselineMethod::Ssi => ssi_identify(&x, fs, cfg.n_target_modes, &cfg.baseline)?,
    };
    let mut out = to_identified(&modes, &measured_x, &all_x)?;
    out.sort_by(|a, b| a.frequency_hz.total_cmp(&b.frequency_hz));
    Ok(out)
}

pub fn baseline(cfg: &RunConfig, ws: &Workspace, methods: &[BaselineMethod]) -> Result<Vec<MethodResult>> {
    let mut rec = StageRecorder::new(ws, Stage::Baseline, ws.stage_dir(Stage::Baseline))?;
    let graphs = load_dataset(&mut rec, ws)?;
    let mut results = Vec::new();
    for &method in methods {
        let mut structures = Vec::new();
        let mut failed = Vec::new();
        for g in &graphs {
            let modes = match run_baseline(method, g, cfg) {
                Ok(m) if !m.is_empty() => m,
                Ok(_) => {
                    failed.push(g.id);
                    Vec::new()
                }
                Err(e) => {
                    warn!("{} on graph {}: {e}", method.name(), g.id);
                    failed.push(g.id);
                    Vec::new()
                }
            };
            structures.push(StructureIdentification { graph_id: g.id, split: g.split, modes });
        }
        let result = finish_method(method.name(), &graphs, structures, failed, None, cfg)?;
        write_method(&mut rec, &format!("{}_", method.name()), &result)?;
        results.push(result);
    }
    rec.finish(cfg)?;
    Ok(results)
}

pub fn log_progress(name: &'static str, every: usize) -> impl FnMut(&EpochRecord) {
    move |r: &EpochRecord| {
        if r.epoch == 1 || r.epoch.is_multiple_of(every) {
            info!(
                "[{name}] epoch {:>5}: train {:.5e} validation {} ({:.0} s)",
                r.epoch,
                r.train.total,
                r.validation.map(|v| format!("{:.5e}", v.total)).unwrap_or_else(|| "-".into()),
                r.wall_time_s
            );
        }
    }
}

/// Train, decompose and identify one model variant.
pub fn run_variant(cfg: &RunConfig, ws: &Workspace, ablation: Ablation) -> Result<MethodResult> {
    train(cfg, ws, ablation, log_progress(ablation.name(), 100))?;
    decompose(cfg, ws, ablation)?;
    identify(cfg, ws, ablation)
}

pub fn ablate(cfg: &RunConfig, ws: &Workspace) -> Result<AblationSummary> {
    let main: MethodResult = read_json(&ws.identification(Ablation::Full), Stage::Identify)?;
    let mut rows = vec![main.summary];
    for &v in &cfg.ablation.variants {
        rows.push(run_variant(cfg, ws, v)?.summary);
    }
    let mut rec = StageRecorder::new(ws, Stage::Ablate, ws.stage_dir(Stage::Ablate))?;
    rec.input(&ws.identification(Ablation::Full), Stage::Identify)?;
    let summary = AblationSummary { rows };
    rec.write_json("ablation.json", &summary)?;
    rec.write("ablation.csv", summary.csv())?;
    rec.finish(cfg)?;
    Ok(summary)
}

pub fn run_stage(cfg: &RunConfig, ws: &Workspace, stage: Stage) -> Result<()> {
    info!("stage {stage}");
    match stage {
        Stage::GenPopulation => gen_population(cfg, ws).map(|_| ()),
        Stage::Simulate => simulate(cfg, ws),
        Stage::Sense => sense(cfg, ws),
        Stage::Train => train(cfg, ws, Ablation::Full, log_progress("full", 100)).map(|_| ()),
        Stage::Decompose => decompose(cfg, ws, Ablation::Full).map(|_| ()),
        Stage::Identify => identify(cfg, ws, Ablation::Full).map(|_| ()),
        Stage::Baseline => baseline(cfg, ws, &BaselineMethod::ALL).map(|_| ()),
        Stage::Ablate => ablate(cfg, ws).map(|_| ()),
        Stage::Report => crate::report::render_report(cfg, ws),
    }
}

/// Execute the configured stages in dependency order.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Workspace> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.out_dir);
    std::fs::create_dir_all(&ws.root).map_err(|source| CliError::Io { path: ws.root.clone(), source })?;
    crate::artifacts::write_file(&ws.root.join("config.toml"), cfg.to_toml().as_bytes())?;
    let mut stages = cfg.stages.clone();
    stages.sort();
    stages.dedup();
    for stage in stages {
        run_stage(cfg, &ws, stage)?;
    }
    Ok(ws)
}
