//! P1 finite elements for `-u'' + w u = f` on `(0, 1)` with `u(0) = u(1) = 0`.
//!
//! Unknowns are the interior nodal values; all operators act on vectors of
//! length `N - 1`. The coupling term is either the exact `∫ w u v` or the
//! locally averaged `∫ (P_h w)(P_h u) v` on a coarse partition.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::functions::Function1d;
use crate::grid::{CellFunction, NodalFunction, Partition};
use crate::linalg::{self, BandedCholesky, BandedSym, SymTridiag, TridiagFactor};

/// Huber smoothing parameter used for the TV term unless configured otherwise.
pub const DEFAULT_HUBER_EPS: f64 = 1e-3;

/// Sparse map between nodal interior dofs and the cells of a coarse partition.
/// Row `i` lists `(dof, weight)` for coarse cell `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellNodeMap {
    coarse: Partition,
    rows: Vec<Vec<(usize, f64)>>,
}

impl CellNodeMap {
    pub fn coarse(&self) -> Partition {
        self.coarse
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `y_i = Σ_j M_{ij} x_j` (the map read from nodes to cells).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum()).collect()
    }

    /// `y_j = Σ_i M_{ij} z_i` (the transpose, from cells to nodes).
    pub fn apply_transpose(&self, z: &[f64], n_dofs: usize) -> Vec<f64> {
        let mut y = vec![0.0; n_dofs];
        for (r, zi) in self.rows.iter().zip(z) {
            for &(j, v) in r {
                y[j] += v * zi;
            }
        }
        y
    }
}

/// Assembled P1 operators on a fine grid.
#[derive(Debug, Clone)]
pub struct FemOperators {
    grid: Partition,
    stiffness: SymTridiag,
    mass: SymTridiag,
}

impl FemOperators {
    pub fn new(grid: Partition) -> Result<Self> {
        let n = grid.n_cells();
        if n < 2 {
            return Err(Error::InvalidPartition("the FEM grid needs at least two cells".into()));
        }
        let h = grid.h();
        let m = n - 1;
        let stiffness = SymTridiag::new(vec![2.0 / h; m], vec![-1.0 / h; m - 1]);
        let mass = SymTridiag::new(vec![4.0 * h / 6.0; m], vec![h / 6.0; m - 1]);
        Ok(Self { grid, stiffness, mass })
    }

    pub fn grid(&self) -> Partition {
        self.grid
    }

    pub fn n_dofs(&self) -> usize {
        self.grid.n_cells() - 1
    }

    pub fn stiffness(&self) -> &SymTridiag {
        &self.stiffness
    }

    pub fn mass(&self) -> &SymTridiag {
        &self.mass
    }

    /// `∫ w φ_j φ_k` for `w` piecewise constant on a grid that divides the FEM grid.
    pub fn weighted_mass(&self, w: &CellFunction) -> Result<SymTridiag> {
        let wf = w.prolong(self.grid).map_err(|_| {
            Error::IncompatibleGrids(format!(
                "control grid with {} cells does not divide the FEM grid with {} cells",
                w.partition().n_cells(),
                self.grid.n_cells()
            ))
        })?;
        let v = wf.values();
        let h = self.grid.h();
        let m = self.n_dofs();
        // dof k sits at node k + 1, between cells k and k + 1
        let diag = (0..m).map(|k| (v[k] + v[k + 1]) * h / 3.0).collect();
        let off = (0..m - 1).map(|k| v[k + 1] * h / 6.0).collect();
        Ok(SymTridiag::new(diag, off))
    }

    /// `E_{j,i} = ∫_{Q_i} φ_j` for the cells `Q_i` of `coarse`.
    pub fn cell_load(&self, coarse: Partition) -> Result<CellNodeMap> {
        let r = self.grid.ratio_to(&coarse)?;
        let h = self.grid.h();
        let n = self.grid.n_cells();
        let rows = (0..coarse.n_cells())
            .map(|i| {
                let (s, e) = (i * r, (i + 1) * r);
                (s..=e)
                    .filter(|&node| node > 0 && node < n)
                    .map(|node| {
                        let wgt = if node == s || node == e { 0.5 * h } else { h };
                        (node - 1, wgt)
                    })
                    .collect()
            })
            .collect();
        Ok(CellNodeMap { coarse, rows })
    }

    /// `R_{i,j} = |Q_i|⁻¹ ∫_{Q_i} φ_j`, mapping nodal values to coarse cell averages.
    pub fn avg_map(&self, coarse: Partition) -> Result<CellNodeMap> {
        let mut e = self.cell_load(coarse)?;
        let inv = 1.0 / coarse.h();
        for row in &mut e.rows {
            for (_, v) in row.iter_mut() {
                *v *= inv;
            }
        }
        Ok(e)
    }

    /// `∫ g φ_j` on interior dofs for a nodal `g` on the FEM grid.
    pub fn nodal_load(&self, g: &NodalFunction) -> Result<Vec<f64>> {
        if g.partition() != self.grid {
            return Err(Error::IncompatibleGrids("load on a different grid".into()));
        }
        let v = g.values();
        let h = self.grid.h();
        Ok((1..self.grid.n_cells()).map(|j| h / 6.0 * (v[j - 1] + 4.0 * v[j] + v[j + 1])).collect())
    }

    pub fn function_load(&self, f: &Function1d) -> Vec<f64> {
        let l = f.hat_loads(self.grid);
        l[1..l.len() - 1].to_vec()
    }

    pub fn to_nodal(&self, interior: &[f64]) -> Result<NodalFunction> {
        NodalFunction::from_interior(self.grid, interior)
    }

    /// `∫_{cell} u p` on every fine cell for two Dirichlet nodal vectors.
    pub fn cell_products(&self, u: &[f64], p: &[f64]) -> Vec<f64> {
        let n = self.grid.n_cells();
        let h = self.grid.h();
        let at = |x: &[f64], node: usize| if node == 0 || node == n { 0.0 } else { x[node - 1] };
        (0..n)
            .map(|c| {
                let (u0, u1, p0, p1) = (at(u, c), at(u, c + 1), at(p, c), at(p, c + 1));
                h / 6.0 * (2.0 * u0 * p0 + u0 * p1 + u1 * p0 + 2.0 * u1 * p1)
            })
            .collect()
    }
}

/// How the bilinear term `u w` enters the state equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// `∫ w u v`.
    Exact,
    /// `∫ (P_h w)(P_h u) v` on the given partition.
    Averaged(Partition),
}

/// Forward problem data.
#[derive(Debug, Clone)]
pub struct PdeProblem {
    pub f: Function1d,
    pub w_lo: f64,
    pub w_hi: f64,
    pub fem_grid: Partition,
    pub control_grid: Partition,
}

impl PdeProblem {
    pub fn new(f: Function1d, w_lo: f64, w_hi: f64, fem_grid: Partition, control_grid: Partition) -> Result<Self> {
        let p = Self { f, w_lo, w_hi, fem_grid, control_grid };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let pi2 = PI * PI;
        if !(self.w_lo > -pi2 && self.w_lo <= self.w_hi && self.w_hi < pi2) {
            return Err(Error::InvalidProblem(format!(
                "control bounds [{}, {}] must satisfy -π² < w_lo ≤ w_hi < π²",
                self.w_lo, self.w_hi
            )));
        }
        if !self.fem_grid.is_refinement_of(&self.control_grid) {
            return Err(Error::IncompatibleGrids(format!(
                "control grid with {} cells does not divide the FEM grid with {} cells",
                self.control_grid.n_cells(),
                self.fem_grid.n_cells()
            )));
        }
        self.f.validate()
    }

    pub fn with_control_grid(&self, control_grid: Partition) -> Result<Self> {
        Self::new(self.f.clone(), self.w_lo, self.w_hi, self.fem_grid, control_grid)
    }

    pub fn f_l2_norm(&self) -> f64 {
        self.f.l2_norm()
    }

    pub fn operators(&self) -> Result<FemOperators> {
        FemOperators::new(self.fem_grid)
    }
}

enum Factor {
    Tridiag(TridiagFactor),
    Banded(BandedCholesky),
    LowRank { base: SymTridiag, u_cols: Vec<Vec<(usize, f64)>>, v_cols: Vec<Vec<(usize, f64)>> },
}

/// Assembled and factored state operator `K + C(w)` for one control.
pub struct StateSystem {
    tridiag: SymTridiag,
    coupling_rows: Option<(CellNodeMap, Vec<f64>)>,
    factor: Factor,
    n: usize,
}

impl StateSystem {
    pub fn assemble(ops: &FemOperators, w: &CellFunction, coupling: Coupling) -> Result<Self> {
        let n = ops.n_dofs();
        match coupling {
            Coupling::Exact => {
                let a = ops.stiffness().add(&ops.weighted_mass(w)?);
                let factor = Factor::Tridiag(a.factor()?);
                Ok(Self { tridiag: a, coupling_rows: None, factor, n })
            }
            Coupling::Averaged(coarse) => {
                let pw = crate::grid::project_avg(w, coarse)?;
                let r = ops.avg_map(coarse)?;
                let hq = coarse.h();
                // K + Σ_k |Q_k| (Pw)_k r_k r_kᵀ with r_k the k-th averaging row
                let d: Vec<f64> = pw.values().iter().map(|v| v * hq).collect();
                let k = ops.stiffness().clone();
                let ratio = ops.grid().n_cells() / coarse.n_cells();
                let banded_cost = (n as f64) * (ratio as f64).powi(2);
                let nh = coarse.n_cells() as f64;
                let lowrank_cost = (n as f64) * nh + nh.powi(3);
                if d.iter().all(|&v| v == 0.0) {
                    let a = k.add(&ops.weighted_mass(&CellFunction::constant(ops.grid(), 0.0))?);
                    let factor = Factor::Tridiag(a.factor()?);
                    return Ok(Self { tridiag: a, coupling_rows: None, factor, n });
                }
                let factor = if ratio <= 1 || banded_cost <= lowrank_cost {
                    let mut b = BandedSym::zeros(n, ratio.max(1));
                    for i in 0..n {
                        b.add(i, i, k.diag[i]);
                        if i + 1 < n {
                            b.add(i + 1, i, k.off[i]);
                        }
                    }
                    for (row, dk) in r.rows().iter().zip(&d) {
                        for &(a, va) in row {
                            for &(c, vc) in row {
                                if c <= a {
                                    b.add(a, c, dk * va * vc);
                                }
                            }
                        }
                    }
                    Factor::Banded(b.cholesky()?)
                } else {
                    let u_cols = r
                        .rows()
                        .iter()
                        .zip(&d)
                        .map(|(row, dk)| row.iter().map(|&(j, v)| (j, dk * v)).collect())
                        .collect();
                    let v_cols = r.rows().to_vec();
                    k.factor()?;
                    Factor::LowRank { base: k.clone(), u_cols, v_cols }
                };
                Ok(Self { tridiag: k, coupling_rows: Some((r, d)), factor, n })
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.tridiag.matvec(x);
        if let Some((r, d)) = &self.coupling_rows {
            let rx = r.apply(x);
            for ((row, dk), s) in r.rows().iter().zip(d).zip(rx) {
                for &(j, v) in row {
                    y[j] += dk * v * s;
                }
            }
        }
        y
    }

    pub fn norm_inf(&self) -> f64 {
        let mut rows: Vec<f64> = (0..self.n)
            .map(|i| {
                let mut s = self.tridiag.diag[i].abs();
                if i > 0 {
                    s += self.tridiag.off[i - 1].abs();
                }
                if i + 1 < self.n {
                    s += self.tridiag.off[i].abs();
                }
                s
            })
            .collect();
        if let Some((r, d)) = &self.coupling_rows {
            for (row, dk) in r.rows().iter().zip(d) {
                let tot: f64 = row.iter().map(|(_, v)| v.abs()).sum();
                for &(j, v) in row {
                    rows[j] += (dk * v).abs() * tot;
                }
            }
        }
        linalg::norm_inf(&rows)
    }

    fn raw_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match &self.factor {
            Factor::Tridiag(f) => Ok(f.solve(b)),
            Factor::Banded(f) => Ok(f.solve(b)),
            Factor::LowRank { base, u_cols, v_cols } => linalg::solve_low_rank_update(base, u_cols, v_cols, b),
        }
    }

    /// Solves with one step of iterative refinement and checks the normwise
    /// backward error against `1e-12`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.raw_solve(b)?;
        let r: Vec<f64> = self.matvec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
        let dx = self.raw_solve(&r)?;
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
        let res = self.residual(&x, b);
        let scale = self.norm_inf() * linalg::norm_inf(&x) + linalg::norm_inf(b);
        if !(res <= 1e-12 * scale.max(f64::MIN_POSITIVE)) {
            return Err(Error::SingularSystem(format!("residual {res:e} exceeds tolerance (scale {scale:e})")));
        }
        Ok(x)
    }

    pub fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        self.matvec(x).iter().zip(b).fold(0.0, |m, (ax, bi)| m.max((ax - bi).abs()))
    }
}

fn check_control(prob: &PdeProblem, w: &CellFunction) -> Result<()> {
    if !prob.fem_grid.is_refinement_of(&w.partition()) {
        return Err(Error::IncompatibleGrids(format!(
            "control on {} cells does not divide the FEM grid with {} cells",
            w.partition().n_cells(),
            prob.fem_grid.n_cells()
        )));
    }
    Ok(())
}

/// Solves the state equation with the exact coupling `∫ w u v`.
pub fn solve_state(prob: &PdeProblem, w: &CellFunction) -> Result<NodalFunction> {
    solve_state_with(prob, w, Coupling::Exact)
}

/// Solves the state equation with the averaged coupling on `coarse`.
pub fn solve_state_avg(prob: &PdeProblem, w: &CellFunction, coarse: Partition) -> Result<NodalFunction> {
    solve_state_with(prob, w, Coupling::Averaged(coarse))
}

pub fn solve_state_with(prob: &PdeProblem, w: &CellFunction, coupling: Coupling) -> Result<NodalFunction> {
    check_control(prob, w)?;
    let ops = prob.operators()?;
    let sys = StateSystem::assemble(&ops, w, coupling)?;
    let u = sys.solve(&ops.function_load(&prob.f))?;
    ops.to_nodal(&u)
}

/// Solves `∫ p' v' + ∫ w p v = ∫ g v` with the same coupling as the state.
pub fn solve_adjoint(
    prob: &PdeProblem,
    w: &CellFunction,
    rhs: &NodalFunction,
    coupling: Coupling,
) -> Result<NodalFunction> {
    check_control(prob, w)?;
    let ops = prob.operators()?;
    let sys = StateSystem::assemble(&ops, w, coupling)?;
    let p = sys.solve(&ops.nodal_load(rhs)?)?;
    ops.to_nodal(&p)
}

/// Tracking term `½‖u − u_d‖²` expanded as `½uᵀMu − bᵀu + c`.
#[derive(Debug, Clone)]
pub struct Tracking {
    pub b: Vec<f64>,
    pub constant: f64,
}

impl Tracking {
    /// Exact integrals of a declarative target against the P1 basis.
    pub fn from_function(ops: &FemOperators, u_d: &Function1d) -> Self {
        Self { b: ops.function_load(u_d), constant: 0.5 * u_d.square_integral() }
    }

    /// Target given by nodal values (continuous piecewise linear).
    pub fn from_nodal(ops: &FemOperators, u_d: &NodalFunction) -> Result<Self> {
        let b = ops.nodal_load(u_d)?;
        let c = 0.5 * u_d.l2_norm().powi(2);
        Ok(Self { b, constant: c })
    }

    pub fn value(&self, ops: &FemOperators, u: &[f64]) -> f64 {
        0.5 * ops.mass().quad_form(u) - linalg::dot(&self.b, u) + self.constant
    }

    pub fn gradient(&self, ops: &FemOperators, u: &[f64]) -> Vec<f64> {
        ops.mass().matvec(u).iter().zip(&self.b).map(|(a, b)| a - b).collect()
    }
}

/// Huber-smoothed absolute value, overestimating `|s|`.
pub fn huber(s: f64, eps: f64) -> f64 {
    if s.abs() < eps {
        s * s / (2.0 * eps) + eps / 2.0
    } else {
        s.abs()
    }
}

pub fn huber_derivative(s: f64, eps: f64) -> f64 {
    if s.abs() < eps {
        s / eps
    } else {
        s.signum()
    }
}

pub fn huber_tv(w: &[f64], eps: f64) -> f64 {
    w.windows(2).map(|p| huber(p[1] - p[0], eps)).sum()
}

pub fn huber_tv_gradient(w: &[f64], eps: f64) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    for j in 0..w.len().saturating_sub(1) {
        let d = huber_derivative(w[j + 1] - w[j], eps);
        g[j + 1] += d;
        g[j] -= d;
    }
    g
}

/// Reduced objective `J(w) = ½‖S(w) − u_d‖² + α·Huber-TV(w)` with its adjoint.
pub struct ReducedObjective<'a> {
    pub prob: &'a PdeProblem,
    pub ops: FemOperators,
    pub tracking: Tracking,
    pub load: Vec<f64>,
    pub coupling: Coupling,
    pub alpha: f64,
    pub eps: f64,
}

/// State, adjoint and derivative information at one control.
pub struct Evaluation {
    pub u: Vec<f64>,
    pub tracking: f64,
    pub smoothed: f64,
    pub nonsmooth: f64,
    pub gradient: Option<Vec<f64>>,
}

impl<'a> ReducedObjective<'a> {
    pub fn new(prob: &'a PdeProblem, tracking: Tracking, coupling: Coupling, alpha: f64, eps: f64) -> Result<Self> {
        let ops = prob.operators()?;
        let load = ops.function_load(&prob.f);
        Ok(Self { prob, ops, tracking, load, coupling, alpha, eps })
    }

    pub fn with_target(
        prob: &'a PdeProblem,
        u_d: &Function1d,
        coupling: Coupling,
        alpha: f64,
        eps: f64,
    ) -> Result<Self> {
        let ops = prob.operators()?;
        let tracking = Tracking::from_function(&ops, u_d);
        Self::new(prob, tracking, coupling, alpha, eps)
    }

    pub fn evaluate(&self, w: &CellFunction, with_gradient: bool) -> Result<Evaluation> {
        check_control(self.prob, w)?;
        let sys = StateSystem::assemble(&self.ops, w, self.coupling)?;
        let u = sys.solve(&self.load)?;
        let tracking = self.tracking.value(&self.ops, &u);
        let smoothed = tracking + self.alpha * huber_tv(w.values(), self.eps);
        let nonsmooth = tracking + self.alpha * crate::grid::tv(w);
        let gradient = if with_gradient {
            let g = self.tracking.gradient(&self.ops, &u);
            let p = sys.solve(&g)?;
            let mut grad = self.coupling_gradient(w, &u, &p)?;
            for (gi, t) in grad.iter_mut().zip(huber_tv_gradient(w.values(), self.eps)) {
                *gi += self.alpha * t;
            }
            Some(grad)
        } else {
            None
        };
        Ok(Evaluation { u, tracking, smoothed, nonsmooth, gradient })
    }

    /// `−pᵀ (∂A/∂w_i) u` for each control cell `i`.
    fn coupling_gradient(&self, w: &CellFunction, u: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        let wg = w.partition();
        match self.coupling {
            Coupling::Exact => {
                let prods = self.ops.cell_products(u, p);
                let r = self.ops.grid().ratio_to(&wg)?;
                Ok(prods.chunks(r).map(|c| -c.iter().sum::<f64>()).collect())
            }
            Coupling::Averaged(coarse) => {
                let r = self.ops.avg_map(coarse)?;
                let (ru, rp) = (r.apply(u), r.apply(p));
                let hq = coarse.h();
                let mut g = vec![0.0; wg.n_cells()];
                if coarse.is_refinement_of(&wg) {
                    let k = coarse.n_cells() / wg.n_cells();
                    for q in 0..coarse.n_cells() {
                        g[q / k] -= hq * rp[q] * ru[q];
                    }
                } else {
                    let k = wg.n_cells() / coarse.n_cells();
                    for i in 0..wg.n_cells() {
                        let q = i / k;
                        g[i] -= hq * rp[q] * ru[q] / k as f64;
                    }
                }
                Ok(g)
            }
        }
    }
}

/// Gradient of `½‖S(w) − u_d‖² + α·Huber_ε-TV(w)` for the state equation with
/// the given coupling.
pub fn reduced_gradient(
    prob: &PdeProblem,
    w: &CellFunction,
    u_d: &NodalFunction,
    alpha: f64,
    eps: f64,
    coupling: Coupling,
) -> Result<CellFunction> {
    let ops = prob.operators()?;
    let tracking = Tracking::from_nodal(&ops, u_d)?;
    let obj = ReducedObjective::new(prob, tracking, coupling, alpha, eps)?;
    let g = obj.evaluate(w, true)?.gradient.expect("gradient requested");
    CellFunction::new(w.partition(), g)
}

/// Directional derivative `S'(w)s` of the averaged control-to-state map.
pub fn state_derivative(
    prob: &PdeProblem,
    w: &CellFunction,
    s: &CellFunction,
    coarse: Partition,
) -> Result<NodalFunction> {
    let ops = prob.operators()?;
    let sys = StateSystem::assemble(&ops, w, Coupling::Averaged(coarse))?;
    let u = sys.solve(&ops.function_load(&prob.f))?;
    let q = derivative_solve(&ops, &sys, coarse, &u, s)?;
    ops.to_nodal(&q)
}

fn derivative_solve(
    ops: &FemOperators,
    sys: &StateSystem,
    coarse: Partition,
    u: &[f64],
    s: &CellFunction,
) -> Result<Vec<f64>> {
    let ps = crate::grid::project_avg(s, coarse)?;
    let e = ops.cell_load(coarse)?;
    let ru = ops.avg_map(coarse)?.apply(u);
    let z: Vec<f64> = ru.iter().zip(ps.values()).map(|(a, b)| -a * b).collect();
    sys.solve(&e.apply_transpose(&z, ops.n_dofs()))
}

/// Second derivative `S''(w)[ψ, φ]` of the averaged control-to-state map.
/// Only used to check the curvature bound `κ`.
pub fn state_second_derivative(
    prob: &PdeProblem,
    w: &CellFunction,
    psi: &CellFunction,
    phi: &CellFunction,
    coarse: Partition,
) -> Result<NodalFunction> {
    let ops = prob.operators()?;
    let sys = StateSystem::assemble(&ops, w, Coupling::Averaged(coarse))?;
    let u = sys.solve(&ops.function_load(&prob.f))?;
    let q_phi = derivative_solve(&ops, &sys, coarse, &u, phi)?;
    let q_psi = derivative_solve(&ops, &sys, coarse, &u, psi)?;
    let r = ops.avg_map(coarse)?;
    let e = ops.cell_load(coarse)?;
    let (rq_phi, rq_psi) = (r.apply(&q_phi), r.apply(&q_psi));
    let (pphi, ppsi) = (crate::grid::project_avg(phi, coarse)?, crate::grid::project_avg(psi, coarse)?);
    let z: Vec<f64> =
        (0..coarse.n_cells()).map(|k| -(rq_phi[k] * ppsi.values()[k] + rq_psi[k] * pphi.values()[k])).collect();
    let xi = sys.solve(&e.apply_transpose(&z, ops.n_dofs()))?;
    ops.to_nodal(&xi)
}

/// `‖u − u_h‖_{L²}` for the exact and averaged states at each coarse level.
pub fn convergence_study(prob: &PdeProblem, w: &CellFunction, levels: &[Partition]) -> Result<Vec<(f64, f64)>> {
    let u = solve_state(prob, w)?;
    levels
        .iter()
        .map(|&coarse| {
            let uh = solve_state_avg(prob, w, coarse)?;
            Ok((coarse.h(), u.sub(&uh)?.l2_norm()))
        })
        .collect()
}

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn loglog_slope(data: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = data.iter().map(|(h, e)| (h.ln(), e.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(n: usize, nc: usize) -> PdeProblem {
        PdeProblem::new(Function1d::constant(6.0), -4.0, 4.0, Partition::new(n).unwrap(), Partition::new(nc).unwrap())
            .unwrap()
    }

    #[test]
    fn poisson_is_nodally_exact() {
        let prob = problem(2048, 8);
        let w = CellFunction::constant(prob.control_grid, 0.0);
        let u = solve_state(&prob, &w).unwrap();
        assert!((u.values()[1024] - 0.75).abs() < 1e-10);
        let err = (0..=2048)
            .map(|i| {
                let x = i as f64 / 2048.0;
                (u.values()[i] - 3.0 * x * (1.0 - x)).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn residual_meets_relative_tolerance_on_small_grid() {
        let prob = problem(16, 4);
        let w = CellFunction::new(prob.control_grid, vec![-4.0, 1.0, 3.5, 4.0]).unwrap();
        let ops = prob.operators().unwrap();
        let sys = StateSystem::assemble(&ops, &w, Coupling::Exact).unwrap();
        let f = ops.function_load(&prob.f);
        let u = sys.solve(&f).unwrap();
        assert!(sys.residual(&u, &f) <= 1e-12 * linalg::norm_inf(&f));
    }

    #[test]
    fn zero_control_gives_identical_states() {
        let prob = problem(256, 8);
        let w = CellFunction::constant(prob.control_grid, 0.0);
        let a = solve_state(&prob, &w).unwrap();
        for nc in [1, 8, 64] {
            let b = solve_state_avg(&prob, &w, Partition::new(nc).unwrap()).unwrap();
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn banded_and_low_rank_paths_agree() {
        let prob = problem(128, 4);
        let w = CellFunction::new(prob.control_grid, vec![-3.0, 2.0, 4.0, -1.0]).unwrap();
        let ops = prob.operators().unwrap();
        let coarse = Partition::new(4).unwrap();
        let sys = StateSystem::assemble(&ops, &w, Coupling::Averaged(coarse)).unwrap();
        assert!(matches!(sys.factor, Factor::LowRank { .. }));
        let f = ops.function_load(&prob.f);
        let x = sys.solve(&f).unwrap();
        // force the banded path
        let r = ops.avg_map(coarse).unwrap();
        let pw = crate::grid::project_avg(&w, coarse).unwrap();
        let mut b = BandedSym::zeros(ops.n_dofs(), 32);
        let k = ops.stiffness();
        for i in 0..ops.n_dofs() {
            b.add(i, i, k.diag[i]);
            if i + 1 < ops.n_dofs() {
                b.add(i + 1, i, k.off[i]);
            }
        }
        for (row, d) in r.rows().iter().zip(pw.values()) {
            for &(a, va) in row {
                for &(c, vc) in row {
                    if c <= a {
                        b.add(a, c, d * coarse.h() * va * vc);
                    }
                }
            }
        }
        let y = b.cholesky().unwrap().solve(&f);
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn adjoint_with_state_rhs_reproduces_state() {
        let prob = problem(64, 8);
        let w = CellFunction::from_fn(prob.control_grid, |i| (i as f64 - 3.5).tanh() * 4.0);
        let u = solve_state(&prob, &w).unwrap();
        let rhs = prob.f.interpolate(prob.fem_grid);
        let p = solve_adjoint(&prob, &w, &rhs, Coupling::Exact).unwrap();
        assert!(u.values().iter().zip(p.values()).all(|(a, b)| (a - b).abs() < 1e-13));
    }

    #[test]
    fn adjoint_of_unit_source() {
        let prob = problem(128, 1);
        let w = CellFunction::constant(prob.control_grid, 0.0);
        let g = NodalFunction::interpolate(prob.fem_grid, |_| 1.0);
        let p = solve_adjoint(&prob, &w, &g, Coupling::Exact).unwrap();
        for (i, v) in p.values().iter().enumerate() {
            let x = i as f64 / 128.0;
            assert!((v - 0.5 * x * (1.0 - x)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_when_target_is_reached() {
        let prob = problem(128, 8);
        let w = CellFunction::from_fn(prob.control_grid, |i| i as f64 - 3.0);
        for coupling in [Coupling::Exact, Coupling::Averaged(Partition::new(16).unwrap())] {
            let u = solve_state_with(&prob, &w, coupling).unwrap();
            let g = reduced_gradient(&prob, &w, &u, 0.0, DEFAULT_HUBER_EPS, coupling).unwrap();
            assert!(g.linf_norm() < 1e-10, "{:?}", g.values());
        }
    }

    #[test]
    fn constant_control_has_no_tv_gradient() {
        let g = huber_tv_gradient(&[1.5; 6], 1e-3);
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(huber(0.0, 1e-3), 5e-4);
        assert_eq!(huber(-2.0, 1e-3), 2.0);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let data: Vec<(f64, f64)> = (3..8)
            .map(|k| {
                let h = 2f64.powi(-k);
                (h, 5.0 * h * h)
            })
            .collect();
        assert!((loglog_slope(&data) - 2.0).abs() < 1e-12);
    }
}
