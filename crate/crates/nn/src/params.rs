//! Named parameter tensors, their initialisation and the Adam optimiser.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<DMatrix<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DMatrix<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform(&mut self, name: impl Into<String>, rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound));
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &DMatrix<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DMatrix<f64> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &DMatrix<f64>)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn zeros_like(&self) -> Vec<DMatrix<f64>> {
        self.values.iter().map(|v| DMatrix::zeros(v.nrows(), v.ncols())).collect()
    }
}

/// Parameters placed on a tape for one forward pass.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn new(tape: &mut Tape, store: &ParamStore) -> Self {
        Self { vars: store.values.iter().map(|v| tape.leaf(v.clone())).collect() }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients per parameter, zero where the loss does not depend on it.
    pub fn gradients(&self, grads: &[Option<DMatrix<f64>>], store: &ParamStore) -> Vec<DMatrix<f64>> {
        self.vars.iter().zip(&store.values).map(|(v, p)| grads[v.0].clone().unwrap_or_else(|| DMatrix::zeros(p.nrows(), p.ncols()))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    step: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Self { config, m: store.zeros_like(), v: store.zeros_like(), step: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[DMatrix<f64>]) {
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = &mut store.values[i];
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                p[k] -= learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + epsilon);
            }
        }
    }
}
