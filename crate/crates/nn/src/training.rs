//! Physics-informed unsupervised loss and the training loop.
//!
//! The loss combines reconstruction `MSE(Phi Q, X)` with two independence
//! penalties: `MSE(R(Q), I)` on the Pearson correlation of the modal
//! responses and `MSE(R_f(Q), I)` on the correlation of their amplitude
//! spectra. MSE is the mean over matrix entries; batch losses are means of
//! per-graph losses.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use trussmodal_core::graphdata::{AttributedGraph, Split};
use trussmodal_core::seed;

use crate::error::{NnError, Result};
use crate::network::{GraphInput, Model, ModelConfig};
use crate::params::{Adam, AdamConfig};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 10.0, lambda2: 1.0, lambda3: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// When false only the reconstruction term is optimised.
    pub independence_enabled: bool,
    /// Abort once the epoch loss exceeds this multiple of the first one.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 64,
            epochs: 5000,
            seed: 0,
            loss_weights: LossWeights::default(),
            independence_enabled: true,
            divergence_factor: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn effective_weights(&self) -> LossWeights {
        if self.independence_enabled {
            self.loss_weights
        } else {
            LossWeights { lambda2: 0.0, lambda3: 0.0, ..self.loss_weights }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.loss_weights;
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(NnError::Config("learning rate must be >= 0, batch size and epochs > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NnError::Config("Adam betas must lie in [0, 1)".into()));
        }
        if w.lambda1 < 0.0 || w.lambda2 < 0.0 || w.lambda3 < 0.0 {
            return Err(NnError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Unweighted loss terms and their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub reconstruction: f64,
    pub time_independence: f64,
    pub frequency_independence: f64,
    pub total: f64,
}

impl LossTerms {
    fn accumulate(&mut self, other: &LossTerms, w: f64) {
        self.reconstruction += w * other.reconstruction;
        self.time_independence += w * other.time_independence;
        self.frequency_independence += w * other.frequency_independence;
        self.total += w * other.total;
    }

    pub fn is_finite(&self) -> bool {
        [self.reconstruction, self.time_independence, self.frequency_independence, self.total].iter().all(|v| v.is_finite())
    }
}

/// Loss handles recorded on a tape.
pub struct LossVars {
    pub total: Var,
    pub terms: [Var; 3],
}

impl LossVars {
    pub fn read(&self, t: &Tape) -> LossTerms {
        LossTerms {
            reconstruction: t.scalar(self.terms[0]),
            time_independence: t.scalar(self.terms[1]),
            frequency_independence: t.scalar(self.terms[2]),
            total: t.scalar(self.total),
        }
    }
}

/// Record the three-term loss for responses `q` (`P x T`), shapes `phi`
/// (`rows x P`) and target signals `x` (`rows x T`).
pub fn loss_on_tape(t: &mut Tape, q: Var, phi: Var, x: &DMatrix<f64>, w: LossWeights) -> LossVars {
    let p = t.value(q).nrows();
    let recon = t.matmul(phi, q);
    let l1 = t.mse_const(recon, x.clone());
    let r = t.correlation(q);
    let l2 = t.mse_const(r, DMatrix::identity(p, p));
    let spec = t.amplitude_spectrum(q);
    let rf = t.correlation(spec);
    let l3 = t.mse_const(rf, DMatrix::identity(p, p));
    let total = t.combine(&[(l1, w.lambda1), (l2, w.lambda2), (l3, w.lambda3)]);
    LossVars { total, terms: [l1, l2, l3] }
}

/// Guarded Pearson correlation between the rows of `q`.
pub fn correlation_matrix(q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut t = Tape::new();
    let v = t.constant(q.clone());
    let r = t.correlation(v);
    t.value(r).clone()
}

/// Correlation between the one-sided amplitude spectra of the rows of `q`.
pub fn spectrum_correlation(q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut t = Tape::new();
    let v = t.constant(q.clone());
    let a = t.amplitude_spectrum(v);
    let r = t.correlation(a);
    t.value(r).clone()
}

/// Mean absolute off-diagonal entry of `R(Q)`; lower means better separated.
pub fn mode_mixing(q: &DMatrix<f64>) -> f64 {
    let r = correlation_matrix(q);
    let p = r.nrows();
    if p < 2 {
        return 0.0;
    }
    let off: f64 = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| r[(i, j)].abs()).sum();
    off / (p * (p - 1)) as f64
}

/// Target rows the model predicts shapes for.
fn target_rows(g: &GraphInput, rows: &[usize]) -> DMatrix<f64> {
    if rows.len() == g.n_nodes() {
        g.signals.clone()
    } else {
        DMatrix::from_fn(rows.len(), g.signals.ncols(), |r, c| g.signals[(rows[r], c)])
    }
}

/// Loss of one graph without gradients.
pub fn evaluate(model: &Model, g: &GraphInput, w: LossWeights) -> Result<LossTerms> {
    let mut t = Tape::new();
    let f = model.forward(&mut t, g)?;
    let x = target_rows(g, &f.rows);
    let l = loss_on_tape(&mut t, f.responses, f.shapes, &x, w);
    Ok(l.read(&t))
}

/// Loss and parameter gradients of one graph.
pub fn loss_and_gradients(model: &Model, g: &GraphInput, w: LossWeights) -> Result<(LossTerms, Vec<DMatrix<f64>>)> {
    let mut t = Tape::new();
    let f = model.forward(&mut t, g)?;
    let x = target_rows(g, &f.rows);
    let l = loss_on_tape(&mut t, f.responses, f.shapes, &x, w);
    let terms = l.read(&t);
    if !terms.is_finite() {
        return Err(NnError::NonFinite(format!("loss terms {terms:?}")));
    }
    let grads = t.backward(l.total);
    Ok((terms, f.params.gradients(&grads, &model.params)))
}

fn mean_loss(model: &Model, graphs: &[GraphInput], w: LossWeights) -> Result<LossTerms> {
    let mut acc = LossTerms::default();
    for g in graphs {
        acc.accumulate(&evaluate(model, g, w)?, 1.0 / graphs.len() as f64);
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossTerms,
    pub validation: Option<LossTerms>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn epochs(&self) -> usize {
        self.records.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_loss,train_reconstruction,train_time_independence,train_frequency_independence,validation_loss,validation_reconstruction,validation_time_independence,validation_frequency_independence,wall_time_s\n",
        );
        for r in &self.records {
            let v = r
                .validation
                .map(|v| format!("{},{},{},{}", v.total, v.reconstruction, v.time_independence, v.frequency_independence))
                .unwrap_or_else(|| ",,,".into());
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.train.total, r.train.reconstruction, r.train.time_independence, r.train.frequency_independence, v, r.wall_time_s
            ));
        }
        out
    }
}

pub struct TrainOutcome {
    pub model: Model,
    /// Parameters at the lowest validation loss (the final ones when no
    /// validation graphs exist).
    pub best: Model,
    pub best_epoch: usize,
    pub log: TrainLog,
}

/// Inputs of every graph in `split`. Only signals and topology are read.
pub fn inputs_of(graphs: &[AttributedGraph], split: Split) -> Vec<GraphInput> {
    graphs.iter().filter(|g| g.split == split).map(|g| GraphInput::new(&g.truss, &g.signals)).collect()
}

/// Train on the `train` split, tracking the `validation` split.
pub fn train(graphs: &[AttributedGraph], model_config: &ModelConfig, config: &TrainConfig, progress: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    let train_set = inputs_of(graphs, Split::Train);
    let validation = inputs_of(graphs, Split::Validation);
    if train_set.is_empty() {
        return Err(NnError::EmptySplit("train"));
    }
    if validation.is_empty() {
        return Err(NnError::EmptySplit("validation"));
    }
    train_inputs(&train_set, &validation, model_config, config, progress)
}

/// Training loop over prepared inputs. Deterministic for a given seed.
pub fn train_inputs(
    train_set: &[GraphInput],
    validation: &[GraphInput],
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(NnError::EmptySplit("train"));
    }
    let weights = config.effective_weights();
    let mut model = Model::new(model_config.clone(), seed::derive_named(config.seed, "init"))?;
    let mut adam =
        Adam::new(AdamConfig { learning_rate: config.learning_rate, beta1: config.beta1, beta2: config.beta2, ..AdamConfig::default() }, &model.params);
    let mut rng = seed::rng(seed::derive_named(config.seed, "shuffle"));
    let start = Instant::now();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut first_loss = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_terms = LossTerms::default();
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut total_grads = model.params.zeros_like();
            for &i in batch {
                let (terms, grads) = loss_and_gradients(&model, &train_set[i], weights).map_err(|e| match e {
                    NnError::NonFinite(msg) => NnError::NonFinite(format!("epoch {epoch}, graph {i}: {msg}")),
                    other => other,
                })?;
                epoch_terms.accumulate(&terms, 1.0 / train_set.len() as f64);
                for (acc, g) in total_grads.iter_mut().zip(grads) {
                    *acc += g * scale;
                }
            }
            adam.update(&mut model.params, &total_grads);
        }
        let validation_terms = if validation.is_empty() { None } else { Some(mean_loss(&model, validation, weights)?) };
        let record = EpochRecord { epoch, train: epoch_terms, validation: validation_terms, wall_time_s: start.elapsed().as_secs_f64() };
        progress(&record);
        log.records.push(record);

        let first = *first_loss.get_or_insert(epoch_terms.total);
        if epoch_terms.total > config.divergence_factor * first {
            return Err(NnError::Diverged { epoch, loss: epoch_terms.total, first, factor: config.divergence_factor });
        }
        let score = validation_terms.map_or(epoch_terms.total, |v| v.total);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { model, best: best_model, best_epoch, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSample {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub tolerance: f64,
    pub samples: Vec<GradientSample>,
}

impl GradientCheckReport {
    pub fn failures(&self) -> Vec<&GradientSample> {
        self.samples.iter().filter(|s| !(s.relative_error < self.tolerance)).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.samples.iter().map(|s| s.relative_error).fold(0.0, f64::max)
    }
}

/// Small random graph for gradient checks: a triangulated strip of `n` nodes.
pub fn tiny_graph(n: usize, len: usize, seed_value: u64) -> GraphInput {
    let mut rng = seed::rng(seed_value);
    let mut groups: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
    for v in 0..n {
        for u in [v + 1, v + 2] {
            if u < n {
                groups[v].push(u);
                groups[u].push(v);
            }
        }
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    let signals = DMatrix::from_fn(n, len, |r, c| {
        let t = c as f64 / len as f64;
        (2.0 * std::f64::consts::PI * (r as f64 + 1.5) * t).sin() + 0.3 * rng.random_range(-1.0..1.0)
    });
    GraphInput { signals, groups, coords: (0..n).map(|i| (i as f64, (i % 2) as f64)).collect(), mask: (0..n).map(|i| i % 2 == 0).collect() }
}

/// Fourth-order central differences of the loss against the tape gradient
/// on a random subset of parameter coordinates. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    model: &Model,
    graph: &GraphInput,
    weights: LossWeights,
    per_tensor: usize,
    tolerance: f64,
    seed_value: u64,
) -> Result<GradientCheckReport> {
    let (_, grads) = loss_and_gradients(model, graph, weights)?;
    let mut rng = seed::rng(seed_value);
    let h = 1e-4;
    let mut probe = model.clone();
    let mut samples = Vec::new();
    let ids: Vec<_> = model.params.iter().map(|(id, name, v)| (id, name.to_string(), v.len())).collect();
    for (id, name, len) in ids {
        for _ in 0..per_tensor.min(len) {
            let k = rng.random_range(0..len);
            let orig = model.params.get(id)[k];
            let mut at = |offset: f64| -> Result<f64> {
                probe.params.get_mut(id)[k] = orig + offset;
                Ok(evaluate(&probe, graph, weights)?.total)
            };
            let numeric = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
            probe.params.get_mut(id)[k] = orig;
            let analytic = grads[id.0][k];
            let relative_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            samples.push(GradientSample { parameter: name.clone(), index: k, analytic, numeric, relative_error });
        }
    }
    Ok(GradientCheckReport { tolerance, samples })
}
