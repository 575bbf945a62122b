//! 2D truss finite elements and linear structural dynamics.
//!
//! Every node carries two translational DOFs `(x, y)`. Bars contribute the
//! rotated axial stiffness `EA/L` and a consistent translational mass matrix.
//! Support DOFs are eliminated, so all matrices below are expressed over the
//! free DOFs only; [`DofMap`] translates between the two numberings.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::population::TrussSpec;
use crate::seed;

/// Global/free DOF numbering for one truss.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    /// Global `(dof_x, dof_y)` per node; global index = `2 * node + axis`.
    pub node_dofs: Vec<[usize; 2]>,
    /// Sorted global indices of constrained DOFs.
    pub constrained: Vec<usize>,
    /// Free index of each global DOF (`None` when constrained).
    pub global_to_free: Vec<Option<usize>>,
    pub n_free: usize,
}

impl DofMap {
    pub fn new(truss: &TrussSpec) -> Self {
        let n = truss.n_nodes();
        let mut fixed = vec![false; 2 * n];
        for s in &truss.supports {
            fixed[2 * s.node] |= s.fixed_x;
            fixed[2 * s.node + 1] |= s.fixed_y;
        }
        let mut global_to_free = vec![None; 2 * n];
        let mut n_free = 0;
        for (g, &f) in fixed.iter().enumerate() {
            if !f {
                global_to_free[g] = Some(n_free);
                n_free += 1;
            }
        }
        Self { node_dofs: (0..n).map(|i| [2 * i, 2 * i + 1]).collect(), constrained: (0..2 * n).filter(|&g| fixed[g]).collect(), global_to_free, n_free }
    }

    pub fn n_nodes(&self) -> usize {
        self.node_dofs.len()
    }

    /// Free index of the vertical DOF of `node`, if it is not constrained.
    pub fn free_y(&self, node: usize) -> Option<usize> {
        self.global_to_free[self.node_dofs[node][1]]
    }

    /// Vertical component per node of a free-DOF vector (zero where fixed).
    pub fn vertical(&self, free: &[f64]) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.free_y(i).map_or(0.0, |f| free[f])).collect()
    }
}

/// Free-DOF stiffness, mass and damping matrices.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub k: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl SystemMatrices {
    /// Install Rayleigh damping `C = alpha M + beta K`.
    pub fn with_rayleigh(mut self, alpha: f64, beta: f64) -> Self {
        self.c = &self.m * alpha + &self.k * beta;
        self
    }
}

/// Element stiffness and mass in global coordinates, DOF order
/// `(x_i, y_i, x_j, y_j)`.
pub fn bar_matrices(a: (f64, f64), b: (f64, f64), e: f64, area: f64, rho: f64) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let l = dx.hypot(dy);
    let (c, s) = (dx / l, dy / l);
    let k = e * area / l;
    let t = [c * c, c * s, s * s];
    let kb = [[t[0], t[1]], [t[1], t[2]]];
    let mut ke = [[0.0; 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            ke[i][j] = k * kb[i][j];
            ke[i + 2][j + 2] = k * kb[i][j];
            ke[i][j + 2] = -k * kb[i][j];
            ke[i + 2][j] = -k * kb[i][j];
        }
    }
    let m = rho * area * l / 6.0;
    let me = [[2.0 * m, 0.0, m, 0.0], [0.0, 2.0 * m, 0.0, m], [m, 0.0, 2.0 * m, 0.0], [0.0, m, 0.0, 2.0 * m]];
    (ke, me)
}

/// Assemble free-DOF `K` and `M` (damping left at zero).
pub fn assemble(truss: &TrussSpec) -> Result<(SystemMatrices, DofMap)> {
    truss.validate()?;
    let dofs = DofMap::new(truss);
    let nf = dofs.n_free;
    let mut k = DMatrix::zeros(nf, nf);
    let mut m = DMatrix::zeros(nf, nf);
    for &(i, j) in &truss.edges {
        let (ke, me) = bar_matrices(truss.node_coords[i], truss.node_coords[j], truss.youngs_modulus_pa, truss.area_m2, truss.density_kg_m3);
        let g = [2 * i, 2 * i + 1, 2 * j, 2 * j + 1];
        for r in 0..4 {
            let Some(fr) = dofs.global_to_free[g[r]] else { continue };
            for c in 0..4 {
                let Some(fc) = dofs.global_to_free[g[c]] else { continue };
                k[(fr, fc)] += ke[r][c];
                m[(fr, fc)] += me[r][c];
            }
        }
    }
    if Cholesky::new(k.clone()).is_none() {
        return Err(Error::Mechanism(format!("constrained stiffness of truss {} is not positive definite", truss.population_id)));
    }
    let c = DMatrix::zeros(nf, nf);
    Ok((SystemMatrices { k, m, c }, dofs))
}

/// Mass-normalised eigenpairs of `K phi = w^2 M phi`, ascending.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    /// Circular frequencies (rad/s).
    pub omegas: Vec<f64>,
    /// Free-DOF mode shapes as columns with `phi^T M phi = 1`.
    pub vectors: DMatrix<f64>,
}

impl EigenSolution {
    pub fn frequencies_hz(&self) -> Vec<f64> {
        self.omegas.iter().map(|w| w / (2.0 * std::f64::consts::PI)).collect()
    }
}

/// Lowest `n_modes` eigenpairs of the generalised symmetric problem, via the
/// Cholesky reduction `L^-1 K L^-T y = w^2 y` with `M = L L^T`.
pub fn eigen(k: &DMatrix<f64>, m: &DMatrix<f64>, n_modes: usize) -> Result<EigenSolution> {
    let n = k.nrows();
    if k.shape() != m.shape() || k.ncols() != n {
        return invalid("K and M must be square with matching sizes");
    }
    if n_modes == 0 || n_modes > n {
        return invalid(format!("requested {n_modes} modes from a {n}-DOF system"));
    }
    let chol = Cholesky::new(m.clone()).ok_or_else(|| Error::Numerical("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l.clone().solve_lower_triangular(&DMatrix::identity(n, n)).ok_or_else(|| Error::Numerical("singular mass factor".into()))?;
    let mut a = &linv * k * linv.transpose();
    a = (&a + a.transpose()) * 0.5;
    let se = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let scale = se.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut omegas = Vec::with_capacity(n_modes);
    let mut vectors = DMatrix::zeros(n, n_modes);
    for (col, &idx) in order.iter().take(n_modes).enumerate() {
        let lam = se.eigenvalues[idx];
        if lam <= 1e-12 * scale {
            return Err(Error::Mechanism(format!("eigenvalue {col} is not positive ({lam:e})")));
        }
        omegas.push(lam.sqrt());
        let y = se.eigenvectors.column(idx);
        let phi = linv.transpose() * y;
        vectors.set_column(col, &phi);
    }
    Ok(EigenSolution { omegas, vectors })
}

/// Rayleigh coefficients giving damping ratio `zeta` at `omega1` and `omega2`.
pub fn rayleigh(omega1: f64, omega2: f64, zeta: f64) -> Result<(f64, f64)> {
    if !(omega1 > 0.0 && omega2 > omega1) {
        return invalid("rayleigh requires 0 < omega1 < omega2");
    }
    let alpha = 2.0 * zeta * omega1 * omega2 / (omega1 + omega2);
    let beta = 2.0 * zeta / (omega1 + omega2);
    Ok((alpha, beta))
}

/// Modal damping ratio produced by Rayleigh coefficients at `omega`.
pub fn rayleigh_ratio(alpha: f64, beta: f64, omega: f64) -> f64 {
    0.5 * (alpha / omega + beta * omega)
}

/// Ground-truth modal properties of one truss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalReference {
    pub frequencies_hz: Vec<f64>,
    pub damping_ratios: Vec<f64>,
    /// `N x n_modes` vertical components, unit max-abs, dominant entry positive.
    pub mode_shapes: DMatrix<f64>,
    pub rayleigh_alpha: f64,
    pub rayleigh_beta: f64,
}

impl ModalReference {
    pub fn n_modes(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn shape(&self, mode: usize) -> Vec<f64> {
        self.mode_shapes.column(mode).iter().copied().collect()
    }
}

/// Rescale so the largest-magnitude entry is exactly `+1`.
pub fn unit_max_positive(v: &mut [f64]) {
    let Some(&peak) = v.iter().max_by(|a, b| a.abs().total_cmp(&b.abs())) else { return };
    if peak != 0.0 {
        v.iter_mut().for_each(|x| *x /= peak);
    }
}

pub fn modal_reference(eig: &EigenSolution, dofs: &DofMap, alpha: f64, beta: f64) -> ModalReference {
    let n_modes = eig.omegas.len();
    let mut shapes = DMatrix::zeros(dofs.n_nodes(), n_modes);
    for m in 0..n_modes {
        let col: Vec<f64> = eig.vectors.column(m).iter().copied().collect();
        let mut v = dofs.vertical(&col);
        unit_max_positive(&mut v);
        shapes.set_column(m, &DVector::from_vec(v));
    }
    ModalReference {
        frequencies_hz: eig.frequencies_hz(),
        damping_ratios: eig.omegas.iter().map(|&w| rayleigh_ratio(alpha, beta, w)).collect(),
        mode_shapes: shapes,
        rayleigh_alpha: alpha,
        rayleigh_beta: beta,
    }
}

/// Newmark parameters; the default is the average-acceleration rule.
#[derive(Debug, Clone, Copy)]
pub struct NewmarkParams {
    pub gamma: f64,
    pub beta: f64,
}

impl Default for NewmarkParams {
    fn default() -> Self {
        Self { gamma: 0.5, beta: 0.25 }
    }
}

/// Displacement, velocity and acceleration histories (`n_free x T`).
#[derive(Debug, Clone)]
pub struct NewmarkResponse {
    pub displacement: DMatrix<f64>,
    pub velocity: DMatrix<f64>,
    pub acceleration: DMatrix<f64>,
}

/// Integrate `M a + C v + K u = f(t)` from zero initial conditions.
/// Column `t` of `load` is the force at time `t * dt`.
pub fn newmark(system: &SystemMatrices, load: &DMatrix<f64>, dt: f64, params: NewmarkParams) -> Result<NewmarkResponse> {
    let n = system.k.nrows();
    newmark_from(system, load, dt, params, &DVector::zeros(n), &DVector::zeros(n))
}

/// As [`newmark`] with explicit initial displacement and velocity.
pub fn newmark_from(
    system: &SystemMatrices,
    load: &DMatrix<f64>,
    dt: f64,
    params: NewmarkParams,
    u0: &DVector<f64>,
    v0: &DVector<f64>,
) -> Result<NewmarkResponse> {
    let n = system.k.nrows();
    if load.nrows() != n {
        return invalid(format!("load has {} rows, system has {n} DOFs", load.nrows()));
    }
    if !(dt > 0.0) {
        return invalid("time step must be positive");
    }
    let steps = load.ncols();
    let NewmarkParams { gamma, beta } = params;
    let (m, c, k) = (&system.m, &system.c, &system.k);

    let m_chol = Cholesky::new(m.clone()).ok_or_else(|| Error::Numerical("mass matrix not positive definite".into()))?;
    let k_eff = k + c * (gamma / (beta * dt)) + m * (1.0 / (beta * dt * dt));
    let k_chol = Cholesky::new(k_eff).ok_or_else(|| Error::Numerical("effective stiffness not positive definite".into()))?;

    let mut disp = DMatrix::zeros(n, steps);
    let mut vel = DMatrix::zeros(n, steps);
    let mut acc = DMatrix::zeros(n, steps);
    if steps == 0 {
        return Ok(NewmarkResponse { displacement: disp, velocity: vel, acceleration: acc });
    }
    let mut u = u0.clone();
    let mut v = v0.clone();
    let mut a = m_chol.solve(&(load.column(0) - c * &v - k * &u));
    disp.set_column(0, &u);
    vel.set_column(0, &v);
    acc.set_column(0, &a);

    let (a0, a1) = (1.0 / (beta * dt * dt), 1.0 / (beta * dt));
    let a2 = 1.0 / (2.0 * beta) - 1.0;
    let (b0, b1) = (gamma / (beta * dt), gamma / beta - 1.0);
    let b2 = dt * (gamma / (2.0 * beta) - 1.0);
    for t in 1..steps {
        let rhs = load.column(t) + m * (&u * a0 + &v * a1 + &a * a2) + c * (&u * b0 + &v * b1 + &a * b2);
        let u_next = k_chol.solve(&rhs);
        let a_next = (&u_next - &u) * a0 - &v * a1 - &a * a2;
        let v_next = &v + (&a * (1.0 - gamma) + &a_next * gamma) * dt;
        u = u_next;
        v = v_next;
        a = a_next;
        disp.set_column(t, &u);
        vel.set_column(t, &v);
        acc.set_column(t, &a);
    }
    Ok(NewmarkResponse { displacement: disp, velocity: vel, acceleration: acc })
}

/// Vertical nodal accelerations of one simulated record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeHistory {
    /// `N x T`, m/s^2, zero rows at vertically fixed nodes.
    pub accelerations: DMatrix<f64>,
    pub dt_s: f64,
    /// First step without excitation.
    pub excitation_cutoff_step: usize,
}

impl TimeHistory {
    pub fn fs_hz(&self) -> f64 {
        1.0 / self.dt_s
    }

    pub fn n_steps(&self) -> usize {
        self.accelerations.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub n_steps: usize,
    pub dt_s: f64,
    /// Steps `0..excitation_steps` are forced; the rest is free decay.
    pub excitation_steps: usize,
    /// White-noise force standard deviation per loaded DOF (N).
    pub force_std_n: f64,
    /// Damping ratio imposed on modes 1 and 2.
    pub zeta: f64,
    /// Modes kept in the reference.
    pub n_reference_modes: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { n_steps: 2000, dt_s: 0.005, excitation_steps: 1000, force_std_n: 1e3, zeta: 0.01, n_reference_modes: 6 }
    }
}

impl SimulationConfig {
    /// Record of `n_steps` samples excited over its first half.
    pub fn with_steps(n_steps: usize) -> Self {
        Self { n_steps, excitation_steps: n_steps / 2, ..Self::default() }
    }
}

/// Free nodes on the bottom chord (`y = 0`) whose vertical DOF is loaded.
pub fn loaded_nodes(truss: &TrussSpec, dofs: &DofMap) -> Vec<usize> {
    (0..truss.n_nodes()).filter(|&i| truss.node_coords[i].1.abs() < 1e-9 && dofs.free_y(i).is_some()).collect()
}

/// Build the system, its modal reference and a forced-then-free response.
pub fn simulate(truss: &TrussSpec, config: &SimulationConfig, seed: u64) -> Result<(TimeHistory, ModalReference)> {
    let (system, dofs) = assemble(truss)?;
    let n_modes = config.n_reference_modes.max(2).min(dofs.n_free);
    let eig = eigen(&system.k, &system.m, n_modes)?;
    let (alpha, beta) = rayleigh(eig.omegas[0], eig.omegas[1], config.zeta)?;
    let reference = modal_reference(&eig, &dofs, alpha, beta);
    let system = system.with_rayleigh(alpha, beta);

    let normal = Normal::new(0.0, config.force_std_n).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut load = DMatrix::zeros(dofs.n_free, config.n_steps);
    let loaded = loaded_nodes(truss, &dofs);
    for t in 0..config.excitation_steps.min(config.n_steps) {
        for &node in &loaded {
            let f = dofs.free_y(node).expect("loaded nodes are vertically free");
            load[(f, t)] = normal.sample(&mut rng);
        }
    }
    let response = newmark(&system, &load, config.dt_s, NewmarkParams::default())?;
    let mut acc = DMatrix::zeros(truss.n_nodes(), config.n_steps);
    for node in 0..truss.n_nodes() {
        if let Some(f) = dofs.free_y(node) {
            acc.set_row(node, &response.acceleration.row(f));
        }
    }
    let history = TimeHistory { accelerations: acc, dt_s: config.dt_s, excitation_cutoff_step: config.excitation_steps };
    Ok((history, reference))
}
