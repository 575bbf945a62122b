//! Decomposition network: a max-pool GraphSAGE encoder over node time series,
//! a set-attention graph head producing `P` modal responses and a shared
//! per-node MLP producing `P` mode-shape entries per node.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use trussmodal_core::baselines::interpolate_shapes;
use trussmodal_core::population::TrussSpec;
use trussmodal_core::seed;
use trussmodal_core::sensing::SignalSet;

use crate::error::{NnError, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Per-node MLP encoder on a fixed subset of measured nodes.
    NoGnn,
    /// Set2Set-style LSTM pooling in place of the set transformer.
    SetLstm,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGnn => "no_gnn",
            Variant::SetLstm => "set_lstm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of decomposed modes `P`.
    pub n_modes: usize,
    /// Samples per input series `T`.
    pub input_len: usize,
    pub hidden_dim: usize,
    pub n_gnn_layers: usize,
    pub n_mlp_layers: usize,
    pub n_attention_heads: usize,
    pub n_inducing_points: usize,
    pub n_isab_blocks: usize,
    pub activation: Activation,
    pub variant: Variant,
    /// Node count kept by the `no_gnn` variant.
    pub subset_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_modes: 7,
            input_len: 2000,
            hidden_dim: 128,
            n_gnn_layers: 3,
            n_mlp_layers: 3,
            n_attention_heads: 4,
            n_inducing_points: 16,
            n_isab_blocks: 2,
            activation: Activation::Relu,
            variant: Variant::Full,
            subset_size: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.n_modes == 0 || self.input_len < 2 || self.hidden_dim == 0 {
            return bad("n_modes, input_len and hidden_dim must be positive (input_len >= 2)");
        }
        if self.n_gnn_layers == 0 || self.n_mlp_layers == 0 {
            return bad("layer counts must be positive");
        }
        if self.n_attention_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_attention_heads) {
            return bad("hidden_dim must be divisible by the attention head count");
        }
        if self.n_inducing_points == 0 {
            return bad("at least one inducing point is required");
        }
        if self.variant == Variant::NoGnn && self.subset_size < 2 {
            return bad("no_gnn needs a subset of at least two nodes");
        }
        Ok(())
    }
}

/// Network input for one graph.
#[derive(Debug, Clone)]
pub struct GraphInput {
    /// `N x T` reconstructed signals.
    pub signals: DMatrix<f64>,
    /// Neighbour lists including the node itself.
    pub groups: Vec<Vec<usize>>,
    pub coords: Vec<(f64, f64)>,
    pub mask: Vec<bool>,
}

impl GraphInput {
    pub fn new(truss: &TrussSpec, signals: &SignalSet) -> Self {
        let groups = truss
            .neighbors()
            .into_iter()
            .enumerate()
            .map(|(v, mut nb)| {
                nb.push(v);
                nb.sort_unstable();
                nb
            })
            .collect();
        Self { signals: signals.signals.clone(), groups, coords: truss.node_coords.clone(), mask: signals.mask.clone() }
    }

    pub fn n_nodes(&self) -> usize {
        self.signals.nrows()
    }

    pub fn x_coords(&self) -> Vec<f64> {
        self.coords.iter().map(|c| c.0).collect()
    }

    /// Relabel nodes: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        Self {
            signals: DMatrix::from_fn(perm.len(), self.signals.ncols(), |r, c| self.signals[(perm[r], c)]),
            groups: perm
                .iter()
                .map(|&old| {
                    let mut g: Vec<usize> = self.groups[old].iter().map(|&u| inverse[u]).collect();
                    g.sort_unstable();
                    g
                })
                .collect(),
            coords: perm.iter().map(|&old| self.coords[old]).collect(),
            mask: perm.iter().map(|&old| self.mask[old]).collect(),
        }
    }

    /// `k` measured nodes evenly spaced along x (ties broken by y).
    pub fn subset(&self, k: usize) -> Vec<usize> {
        let mut measured: Vec<usize> = (0..self.n_nodes()).filter(|&i| self.mask[i]).collect();
        if measured.len() < k {
            measured = (0..self.n_nodes()).collect();
        }
        measured.sort_by(|&a, &b| self.coords[a].0.total_cmp(&self.coords[b].0).then(self.coords[a].1.total_cmp(&self.coords[b].1)));
        let m = measured.len();
        let k = k.min(m);
        (0..k).map(|i| measured[if k == 1 { 0 } else { i * (m - 1) / (k - 1) }]).collect()
    }
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), d_in, d_out, d_in, rng);
        let b = bias.then(|| store.add_uniform(format!("{name}.b"), 1, d_out, d_in, rng));
        Self { w, b }
    }

    fn apply(&self, t: &mut Tape, p: &Bound, x: Var) -> Var {
        let y = t.matmul(x, p.var(self.w));
        match self.b {
            Some(b) => t.add_row(y, p.var(b)),
            None => y,
        }
    }
}

fn activate(t: &mut Tape, act: Activation, x: Var) -> Var {
    match act {
        Activation::Relu => t.relu(x),
        Activation::Tanh => t.tanh(x),
    }
}

/// `h' = act(W * max_{u in N(v) + v} act(W_pool h_u + b_pool)) + b`
#[derive(Debug, Clone)]
struct SageLayer {
    pool: Linear,
    w: ParamId,
    b: ParamId,
}

impl SageLayer {
    fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let pool = Linear::new(store, &format!("{name}.pool"), d_in, d_out, true, rng);
        let w = store.add_uniform(format!("{name}.w"), d_out, d_out, d_out, rng);
        let b = store.add_uniform(format!("{name}.b"), 1, d_out, d_out, rng);
        Self { pool, w, b }
    }

    fn apply(&self, t: &mut Tape, p: &Bound, act: Activation, h: Var, groups: &[Vec<usize>]) -> Var {
        let z = self.pool.apply(t, p, h);
        let z = activate(t, act, z);
        let agg = t.gather_max(z, groups);
        let y = t.matmul(agg, p.var(self.w));
        let y = activate(t, act, y);
        t.add_row(y, p.var(self.b))
    }
}

/// Multihead attention block without layer norm:
/// `O = Xq Wq + softmax(Q K^T / sqrt(d)) V` per head, then `O + act(O Wo + bo)`.
#[derive(Debug, Clone)]
struct Mab {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Mab {
    fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, true, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, true, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, true, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, true, rng),
        }
    }

    fn apply(&self, t: &mut Tape, p: &Bound, act: Activation, heads: usize, x: Var, y: Var) -> Var {
        let q = self.q.apply(t, p, x);
        let k = self.k.apply(t, p, y);
        let v = self.v.apply(t, p, y);
        let d = t.value(q).ncols();
        let dh = d / heads;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = t.slice_cols(q, h * dh, dh);
            let kh = t.slice_cols(k, h * dh, dh);
            let vh = t.slice_cols(v, h * dh, dh);
            let logits = t.matmul_t(qh, kh);
            let logits = t.scale(logits, 1.0 / (d as f64).sqrt());
            let att = t.softmax_rows(logits);
            let mixed = t.matmul(att, vh);
            outs.push(t.add(qh, mixed));
        }
        let o = if heads == 1 { outs[0] } else { t.concat_cols(&outs) };
        let ff = self.o.apply(t, p, o);
        let ff = activate(t, act, ff);
        t.add(o, ff)
    }
}

/// Induced set attention block.
#[derive(Debug, Clone)]
struct Isab {
    inducing: ParamId,
    a: Mab,
    b: Mab,
}

#[derive(Debug, Clone)]
struct Lstm {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
enum Pooling {
    Attention { seeds: ParamId, mab: Mab },
    Set2Set { lstm: Lstm, proj: Linear },
}

#[derive(Debug, Clone)]
enum Encoder {
    Sage(Vec<SageLayer>),
    Mlp(Vec<Linear>),
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Encoder,
    isabs: Vec<Isab>,
    pooling: Pooling,
    decoder: Linear,
    node_head: Vec<Linear>,
}

/// Separated modal responses and shapes, scale-normalised: every shape
/// column has unit max-abs value with its largest-magnitude entry positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    /// `P x T`
    pub modal_responses: DMatrix<f64>,
    /// `N x P`
    pub mode_shapes: DMatrix<f64>,
}

impl DecompositionResult {
    pub fn normalized(mut modal_responses: DMatrix<f64>, mut mode_shapes: DMatrix<f64>) -> Self {
        for j in 0..mode_shapes.ncols() {
            let col = mode_shapes.column(j);
            let (idx, peak) = col.iter().enumerate().fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1.abs() { (i, *v) } else { best });
            if peak == 0.0 || !peak.is_finite() {
                continue;
            }
            debug_assert_eq!(mode_shapes[(idx, j)], peak);
            mode_shapes.column_mut(j).scale_mut(1.0 / peak);
            modal_responses.row_mut(j).scale_mut(peak);
        }
        Self { modal_responses, mode_shapes }
    }

    pub fn n_modes(&self) -> usize {
        self.modal_responses.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.modal_responses.iter().chain(self.mode_shapes.iter()).all(|v| v.is_finite())
    }
}

/// Tape handles of one forward pass.
pub struct Forward {
    /// `P x T`
    pub responses: Var,
    /// `rows.len() x P`
    pub shapes: Var,
    /// Node indices the shape rows refer to.
    pub rows: Vec<usize>,
    pub params: Bound,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

impl Model {
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(init_seed);
        let mut store = ParamStore::new();
        let layout = Self::build(&config, &mut store, &mut rng);
        Ok(Self { config, params: store, layout })
    }

    /// Rebuild with the given parameter values (names and shapes must match).
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(NnError::Checkpoint(format!("expected {} tensors, found {}", model.params.len(), params.len())));
        }
        for ((_, n1, v1), (_, n2, v2)) in model.params.iter().zip(params.iter()) {
            if n1 != n2 || v1.shape() != v2.shape() {
                return Err(NnError::Checkpoint(format!("tensor {n2} {:?} does not match {n1} {:?}", v2.shape(), v1.shape())));
            }
        }
        model.params = params;
        Ok(model)
    }

    fn build(c: &ModelConfig, s: &mut ParamStore, rng: &mut ChaCha8Rng) -> Layout {
        let d = c.hidden_dim;
        let encoder = match c.variant {
            Variant::NoGnn => {
                Encoder::Mlp((0..c.n_gnn_layers).map(|l| Linear::new(s, &format!("encoder.{l}"), if l == 0 { c.input_len } else { d }, d, true, rng)).collect())
            }
            _ => Encoder::Sage((0..c.n_gnn_layers).map(|l| SageLayer::new(s, &format!("gnn.{l}"), if l == 0 { c.input_len } else { d }, d, rng)).collect()),
        };
        let isabs = if c.variant == Variant::SetLstm {
            Vec::new()
        } else {
            (0..c.n_isab_blocks)
                .map(|i| Isab {
                    inducing: s.add_uniform(format!("isab.{i}.inducing"), c.n_inducing_points, d, d, rng),
                    a: Mab::new(s, &format!("isab.{i}.mab0"), d, rng),
                    b: Mab::new(s, &format!("isab.{i}.mab1"), d, rng),
                })
                .collect()
        };
        let pooling = if c.variant == Variant::SetLstm {
            Pooling::Set2Set {
                lstm: Lstm {
                    wx: s.add_uniform("set2set.lstm.wx", 2 * d, 4 * d, d, rng),
                    wh: s.add_uniform("set2set.lstm.wh", d, 4 * d, d, rng),
                    b: s.add_uniform("set2set.lstm.b", 1, 4 * d, d, rng),
                },
                proj: Linear::new(s, "set2set.proj", 2 * d, d, true, rng),
            }
        } else {
            Pooling::Attention { seeds: s.add_uniform("pma.seeds", c.n_modes, d, d, rng), mab: Mab::new(s, "pma.mab", d, rng) }
        };
        let decoder = Linear::new(s, "decoder", d, c.input_len, true, rng);
        let node_head =
            (0..c.n_mlp_layers).map(|l| Linear::new(s, &format!("node_head.{l}"), d, if l + 1 == c.n_mlp_layers { c.n_modes } else { d }, true, rng)).collect();
        Layout { encoder, isabs, pooling, decoder, node_head }
    }

    fn check_input(&self, g: &GraphInput) -> Result<()> {
        if g.signals.ncols() != self.config.input_len {
            return Err(NnError::Shape(format!("input length {} but the model expects {}", g.signals.ncols(), self.config.input_len)));
        }
        if g.groups.len() != g.n_nodes() || g.coords.len() != g.n_nodes() || g.mask.len() != g.n_nodes() {
            return Err(NnError::Shape("graph metadata does not cover every node".into()));
        }
        if g.groups.iter().any(|grp| grp.is_empty() || grp.iter().any(|&u| u >= g.n_nodes())) {
            return Err(NnError::Shape("neighbour list out of range or empty".into()));
        }
        Ok(())
    }

    /// Node rows the model reads and predicts shapes for.
    pub fn node_rows(&self, g: &GraphInput) -> Vec<usize> {
        match self.config.variant {
            Variant::NoGnn => g.subset(self.config.subset_size),
            _ => (0..g.n_nodes()).collect(),
        }
    }

    /// Hidden node features `H`.
    pub fn encode(&self, t: &mut Tape, p: &Bound, g: &GraphInput) -> (Var, Vec<usize>) {
        let act = self.config.activation;
        let rows = self.node_rows(g);
        match &self.layout.encoder {
            Encoder::Sage(layers) => {
                let mut h = t.constant(g.signals.clone());
                for layer in layers {
                    h = layer.apply(t, p, act, h, &g.groups);
                }
                (h, rows)
            }
            Encoder::Mlp(layers) => {
                let sub = DMatrix::from_fn(rows.len(), g.signals.ncols(), |r, c| g.signals[(rows[r], c)]);
                let mut h = t.constant(sub);
                for layer in layers {
                    h = layer.apply(t, p, h);
                    h = activate(t, act, h);
                }
                (h, rows)
            }
        }
    }

    /// `P x T` modal responses from hidden features; invariant to row order of `h`.
    pub fn graph_head(&self, t: &mut Tape, p: &Bound, h: Var) -> Var {
        let act = self.config.activation;
        let heads = self.config.n_attention_heads;
        let mut x = h;
        for isab in &self.layout.isabs {
            let ind = p.var(isab.inducing);
            let summary = isab.a.apply(t, p, act, heads, ind, x);
            x = isab.b.apply(t, p, act, heads, x, summary);
        }
        let pooled = match &self.layout.pooling {
            Pooling::Attention { seeds, mab } => mab.apply(t, p, act, heads, p.var(*seeds), x),
            Pooling::Set2Set { lstm, proj } => {
                let d = self.config.hidden_dim;
                let mut q_star = t.constant(DMatrix::zeros(1, 2 * d));
                let mut hid = t.constant(DMatrix::zeros(1, d));
                let mut cell = t.constant(DMatrix::zeros(1, d));
                let mut outs = Vec::with_capacity(self.config.n_modes);
                for _ in 0..self.config.n_modes {
                    let zx = t.matmul(q_star, p.var(lstm.wx));
                    let zh = t.matmul(hid, p.var(lstm.wh));
                    let z = t.add(zx, zh);
                    let z = t.add_row(z, p.var(lstm.b));
                    let gi = t.slice_cols(z, 0, d);
                    let i = t.sigmoid(gi);
                    let gf = t.slice_cols(z, d, d);
                    let f = t.sigmoid(gf);
                    let gg = t.slice_cols(z, 2 * d, d);
                    let g = t.tanh(gg);
                    let go = t.slice_cols(z, 3 * d, d);
                    let o = t.sigmoid(go);
                    let keep = t.hadamard(f, cell);
                    let write = t.hadamard(i, g);
                    cell = t.add(keep, write);
                    let tc = t.tanh(cell);
                    hid = t.hadamard(o, tc);
                    let logits = t.matmul_t(hid, x);
                    let att = t.softmax_rows(logits);
                    let read = t.matmul(att, x);
                    q_star = t.concat_cols(&[hid, read]);
                    outs.push(proj.apply(t, p, q_star));
                }
                t.concat_rows(&outs)
            }
        };
        self.layout.decoder.apply(t, p, pooled)
    }

    /// `rows x P` mode-shape entries from hidden features.
    pub fn node_head(&self, t: &mut Tape, p: &Bound, h: Var) -> Var {
        let act = self.config.activation;
        let mut y = h;
        let n = self.layout.node_head.len();
        for (l, layer) in self.layout.node_head.iter().enumerate() {
            y = layer.apply(t, p, y);
            if l + 1 < n {
                y = activate(t, act, y);
            }
        }
        y
    }

    /// Record one forward pass on `t`.
    pub fn forward(&self, t: &mut Tape, g: &GraphInput) -> Result<Forward> {
        self.check_input(g)?;
        let params = Bound::new(t, &self.params);
        let (h, rows) = self.encode(t, &params, g);
        let responses = self.graph_head(t, &params, h);
        let shapes = self.node_head(t, &params, h);
        Ok(Forward { responses, shapes, rows, params })
    }

    /// Raw `(Q, Phi)` before scale normalisation, `Phi` over `node_rows`.
    pub fn raw(&self, g: &GraphInput) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<usize>)> {
        let mut t = Tape::new();
        let f = self.forward(&mut t, g)?;
        Ok((t.value(f.responses).clone(), t.value(f.shapes).clone(), f.rows))
    }

    /// Inference: normalised responses and shapes over all `N` nodes. The
    /// `no_gnn` variant interpolates its subset shapes along x.
    pub fn decompose(&self, g: &GraphInput) -> Result<DecompositionResult> {
        let (q, phi, rows) = self.raw(g)?;
        let shapes = if rows.len() == g.n_nodes() {
            phi
        } else {
            let xs: Vec<f64> = rows.iter().map(|&r| g.coords[r].0).collect();
            interpolate_shapes(&phi, &xs, &g.x_coords())?
        };
        let out = DecompositionResult::normalized(q, shapes);
        if !out.is_finite() {
            return Err(NnError::NonFinite("decomposition produced non-finite values".into()));
        }
        Ok(out)
    }
}
