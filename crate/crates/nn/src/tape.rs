//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and accumulates adjoints. Nodes created from constants
//! do not require gradients and are skipped during the backward sweep.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    MatMul(usize, usize),
    /// `a * b^T`
    MatMulT(usize, usize),
    Add(usize, usize),
    /// `a + 1 * row`
    AddRow(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    SoftmaxRows(usize),
    /// Row `v` of the output is the column-wise max over `rows[v]`; `argmax`
    /// is indexed `(v, c)` in column-major order.
    GatherMax {
        input: usize,
        argmax: Vec<usize>,
    },
    SliceCols {
        input: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    /// Pearson correlation of rows with a guard inside each square root.
    Correlation {
        input: usize,
        centered: DMatrix<f64>,
        scale: Vec<f64>,
    },
    /// One-sided FFT magnitude of each row.
    AmplitudeSpectrum {
        input: usize,
        spectra: Vec<Vec<Complex64>>,
    },
    /// Mean squared difference to a constant target.
    MseConst {
        input: usize,
        target: DMatrix<f64>,
    },
    /// Weighted sum of `1 x 1` nodes.
    Combine(Vec<(usize, f64)>),
}

struct Node {
    value: DMatrix<f64>,
    op: Op,
    needs_grad: bool,
}

/// Correlation guard added under each square root.
pub const CORRELATION_EPS: f64 = 1e-8;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// `op(a) * op(b)` where `op` optionally transposes, without copying.
fn gemm(a: &DMatrix<f64>, ta: bool, b: &DMatrix<f64>, tb: bool) -> DMatrix<f64> {
    let (m, k) = if ta { (a.ncols(), a.nrows()) } else { a.shape() };
    let (k2, n) = if tb { (b.ncols(), b.nrows()) } else { b.shape() };
    assert_eq!(k, k2, "matmul inner dimensions");
    let mut out = DMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // Column-major storage: element (r, c) sits at r + c * nrows.
    let strides = |x: &DMatrix<f64>, t: bool| if t { (x.nrows() as isize, 1) } else { (1, x.nrows() as isize) };
    let (rsa, csa) = strides(a, ta);
    let (rsb, csb) = strides(b, tb);
    // SAFETY: pointers and strides describe the full, live buffers of `a`,
    // `b` and `out`, whose shapes match the `m x k`, `k x n`, `m x n` operands.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0, out.as_mut_ptr(), 1, m as isize);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf, typically a parameter.
    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = gemm(&self.nodes[a.0].value, false, &self.nodes[b.0].value, false);
        let g = self.grad_of(&[a.0, b.0]);
        self.push(v, Op::MatMul(a.0, b.0), g)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = gemm(&self.nodes[a.0].value, false, &self.nodes[b.0].value, true);
        let g = self.grad_of(&[a.0, b.0]);
        self.push(v, Op::MatMulT(a.0, b.0), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let g = self.grad_of(&[a.0, b.0]);
        self.push(v, Op::Add(a.0, b.0), g)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = &self.nodes[row.0].value;
        assert_eq!(r.nrows(), 1, "add_row expects a row vector");
        let mut v = self.nodes[a.0].value.clone();
        for mut line in v.row_iter_mut() {
            line += r;
        }
        let g = self.grad_of(&[a.0, row.0]);
        self.push(v, Op::AddRow(a.0, row.0), g)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.component_mul(&self.nodes[b.0].value);
        let g = self.grad_of(&[a.0, b.0]);
        self.push(v, Op::Hadamard(a.0, b.0), g)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = &self.nodes[a.0].value * s;
        let g = self.grad_of(&[a.0]);
        self.push(v, Op::Scale(a.0, s), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(|x| x.max(0.0));
        let g = self.grad_of(&[a.0]);
        self.push(v, Op::Relu(a.0), g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(|x| 1.0 / (1.0 + (-x).exp()));
        let g = self.grad_of(&[a.0]);
        self.push(v, Op::Sigmoid(a.0), g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(f64::tanh);
        let g = self.grad_of(&[a.0]);
        self.push(v, Op::Tanh(a.0), g)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.nodes[a.0].value.clone();
        for mut row in v.row_iter_mut() {
            let m = row.max();
            row.apply(|x| *x = (*x - m).exp());
            let s = row.sum();
            row /= s;
        }
        let g = self.grad_of(&[a.0]);
        self.push(v, Op::SoftmaxRows(a.0), g)
    }

    /// Output row `v` = column-wise max of input rows `groups[v]`.
    pub fn gather_max(&mut self, a: Var, groups: &[Vec<usize>]) -> Var {
        let x = &self.nodes[a.0].value;
        let d = x.ncols();
        let mut v = DMatrix::zeros(groups.len(), d);
        let mut argmax = vec![0usize; groups.len() * d];
        for c in 0..d {
            for (r, group) in groups.iter().enumerate() {
                assert!(!group.is_empty(), "gather_max over an empty group");
                let mut best = group[0];
                for &u in &group[1..] {
                    if x[(u, c)] > x[(best, c)] {
                        best = u;
                    }
                }
                v[(r, c)] = x[(best, c)];
                argmax[c * groups.len() + r] = best;
            }
        }
        let g = self.grad_of(&[a.0]);
        self.push(v, Op::GatherMax { input: a.0, argmax }, g)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[a.0].value.columns(start, len).into_owned();
        let g = self.grad_of(&[a.0]);
        self.push(v, Op::SliceCols { input: a.0, start }, g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.nodes[parts[0].0].value.nrows();
        let cols: usize = parts.iter().map(|p| self.nodes[p.0].value.ncols()).sum();
        let mut v = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let m = &self.nodes[p.0].value;
            v.columns_mut(at, m.ncols()).copy_from(m);
            at += m.ncols();
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let g = self.grad_of(&ids);
        self.push(v, Op::ConcatCols(ids), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.nodes[parts[0].0].value.ncols();
        let rows: usize = parts.iter().map(|p| self.nodes[p.0].value.nrows()).sum();
        let mut v = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let m = &self.nodes[p.0].value;
            v.rows_mut(at, m.nrows()).copy_from(m);
            at += m.nrows();
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let g = self.grad_of(&ids);
        self.push(v, Op::ConcatRows(ids), g)
    }

    /// `R_ij = S_ij / (d_i d_j)` with `S = Qc Qc^T`, `Qc` the row-centred
    /// input and `d_i = sqrt(S_ii + eps)`.
    pub fn correlation(&mut self, a: Var) -> Var {
        let q = &self.nodes[a.0].value;
        let mut centered = q.clone();
        for mut row in centered.row_iter_mut() {
            let m = row.mean();
            row.add_scalar_mut(-m);
        }
        let s = gemm(&centered, false, &centered, true);
        let scale: Vec<f64> = (0..s.nrows()).map(|i| (s[(i, i)] + CORRELATION_EPS).sqrt()).collect();
        let v = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| s[(i, j)] / (scale[i] * scale[j]));
        let g = self.grad_of(&[a.0]);
        self.push(v, Op::Correlation { input: a.0, centered, scale }, g)
    }

    /// `|FFT(row)|` at bins `0..=T/2` for each row.
    pub fn amplitude_spectrum(&mut self, a: Var) -> Var {
        let q = &self.nodes[a.0].value;
        let (p, t) = q.shape();
        let bins = t / 2 + 1;
        let fft = FftPlanner::new().plan_fft_forward(t);
        let mut spectra = Vec::with_capacity(p);
        let mut v = DMatrix::zeros(p, bins);
        for i in 0..p {
            let mut buf: Vec<Complex64> = q.row(i).iter().map(|&x| Complex64::new(x, 0.0)).collect();
            fft.process(&mut buf);
            for k in 0..bins {
                v[(i, k)] = buf[k].norm();
            }
            spectra.push(buf);
        }
        let g = self.grad_of(&[a.0]);
        self.push(v, Op::AmplitudeSpectrum { input: a.0, spectra }, g)
    }

    pub fn mse_const(&mut self, a: Var, target: DMatrix<f64>) -> Var {
        let x = &self.nodes[a.0].value;
        assert_eq!(x.shape(), target.shape(), "mse target shape");
        let m = (x - &target).norm_squared() / x.len() as f64;
        let g = self.grad_of(&[a.0]);
        self.push(DMatrix::from_element(1, 1, m), Op::MseConst { input: a.0, target }, g)
    }

    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        let v: f64 = terms.iter().map(|(t, w)| w * self.nodes[t.0].value[(0, 0)]).sum();
        let ids: Vec<usize> = terms.iter().map(|t| t.0 .0).collect();
        let g = self.grad_of(&ids);
        self.push(DMatrix::from_element(1, 1, v), Op::Combine(terms.iter().map(|(t, w)| (t.0, *w)).collect()), g)
    }

    /// Adjoints of every node with respect to the scalar `root`. Entries are
    /// `None` for nodes the root does not depend on or that need no gradient.
    pub fn backward(&self, root: Var) -> Vec<Option<DMatrix<f64>>> {
        let mut grads: Vec<Option<DMatrix<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(DMatrix::from_element(1, 1, 1.0));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads
    }

    fn accumulate(&self, grads: &mut [Option<DMatrix<f64>>], id: usize, g: DMatrix<f64>) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut grads[id] {
            Some(acc) => *acc += g,
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &DMatrix<f64>, grads: &mut [Option<DMatrix<f64>>]) {
        let val = |i: usize| &self.nodes[i].value;
        let needs = |i: usize| self.nodes[i].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, gemm(g, false, val(*b), true));
                }
                if needs(*b) {
                    self.accumulate(grads, *b, gemm(val(*a), true, g, false));
                }
            }
            Op::MatMulT(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, gemm(g, false, val(*b), false));
                }
                if needs(*b) {
                    self.accumulate(grads, *b, gemm(g, true, val(*a), false));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, *a, g.clone());
                if needs(*r) {
                    self.accumulate(grads, *r, DMatrix::from_fn(1, g.ncols(), |_, c| g.column(c).sum()));
                }
            }
            Op::Hadamard(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, g.component_mul(val(*b)));
                }
                if needs(*b) {
                    self.accumulate(grads, *b, g.component_mul(val(*a)));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g * *s),
            Op::Relu(a) => {
                let x = val(*a);
                self.accumulate(grads, *a, g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(&node.value, |gi, y| gi * y * (1.0 - y)));
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, g.zip_map(&node.value, |gi, y| gi * (1.0 - y * y)));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut dx = g.component_mul(y);
                for r in 0..y.nrows() {
                    let s: f64 = dx.row(r).sum();
                    for c in 0..y.ncols() {
                        dx[(r, c)] -= y[(r, c)] * s;
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::GatherMax { input, argmax } => {
                let x = val(*input);
                let rows = node.value.nrows();
                let mut dx = DMatrix::zeros(x.nrows(), x.ncols());
                for c in 0..x.ncols() {
                    for r in 0..rows {
                        dx[(argmax[c * rows + r], c)] += g[(r, c)];
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::SliceCols { input, start } => {
                let x = val(*input);
                let mut dx = DMatrix::zeros(x.nrows(), x.ncols());
                dx.columns_mut(*start, g.ncols()).copy_from(g);
                self.accumulate(grads, *input, dx);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    if needs(p) {
                        self.accumulate(grads, p, g.columns(at, w).into_owned());
                    }
                    at += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let h = val(p).nrows();
                    if needs(p) {
                        self.accumulate(grads, p, g.rows(at, h).into_owned());
                    }
                    at += h;
                }
            }
            Op::Correlation { input, centered, scale } => {
                let r = &node.value;
                let n = r.nrows();
                let mut gs = DMatrix::from_fn(n, n, |i, j| g[(i, j)] / (scale[i] * scale[j]));
                for i in 0..n {
                    let s: f64 = (0..n).map(|k| g[(i, k)] * r[(i, k)] + g[(k, i)] * r[(k, i)]).sum();
                    gs[(i, i)] -= s / (2.0 * scale[i] * scale[i]);
                }
                let mut dq = gemm(&(&gs + gs.transpose()), false, centered, false);
                for mut row in dq.row_iter_mut() {
                    let m = row.mean();
                    row.add_scalar_mut(-m);
                }
                self.accumulate(grads, *input, dq);
            }
            Op::AmplitudeSpectrum { input, spectra } => {
                let x = val(*input);
                let (p, t) = x.shape();
                let ifft = FftPlanner::new().plan_fft_inverse(t);
                let mut dx = DMatrix::zeros(p, t);
                for i in 0..p {
                    let mut buf = vec![Complex64::new(0.0, 0.0); t];
                    for k in 0..node.value.ncols() {
                        let amp = node.value[(i, k)];
                        if amp > 0.0 {
                            buf[k] = spectra[i][k] * (g[(i, k)] / amp);
                        }
                    }
                    ifft.process(&mut buf);
                    for s in 0..t {
                        dx[(i, s)] = buf[s].re;
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::MseConst { input, target } => {
                let x = val(*input);
                let k = 2.0 * g[(0, 0)] / x.len() as f64;
                self.accumulate(grads, *input, (x - target) * k);
            }
            Op::Combine(terms) => {
                for &(t, w) in terms {
                    self.accumulate(grads, t, DMatrix::from_element(1, 1, w * g[(0, 0)]));
                }
            }
        }
    }
}
