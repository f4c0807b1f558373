//! Sparse convex QPs `min ½xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u` and their solution.
//!
//! Problems are solved with the Clarabel interior-point solver. Two-sided
//! rows are split into the cones Clarabel expects and the multipliers are
//! folded back into a single vector `y` with `Px + q + Aᵀy = 0`. Reported
//! residuals are always recomputed on the unscaled data.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::{Error, Result};
use crate::linalg::BandedSym;

/// Magnitude at and beyond which a bound counts as infinite.
pub const INF: f64 = 1e20;

pub fn is_finite_bound(v: f64) -> bool {
    v.abs() < INF
}

/// Coordinate-format sparse matrix. Duplicates are summed on conversion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, ..Default::default() }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.rows.push(i);
        self.cols.push(j);
        self.vals.push(v);
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for k in 0..self.nnz() {
            y[self.rows[k]] += self.vals[k] * x[self.cols[k]];
        }
        y
    }

    pub fn matvec_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.ncols];
        for k in 0..self.nnz() {
            x[self.cols[k]] += self.vals[k] * y[self.rows[k]];
        }
        x
    }

    fn to_csc(&self) -> CscMatrix<f64> {
        CscMatrix::new_from_triplets(self.nrows, self.ncols, self.rows.clone(), self.cols.clone(), self.vals.clone())
    }
}

/// Symmetric matrix-vector product from upper-triangle triplets.
fn sym_upper_matvec(p: &Triplets, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; p.nrows];
    for k in 0..p.nnz() {
        let (i, j, v) = (p.rows[k], p.cols[k], p.vals[k]);
        y[i] += v * x[j];
        if i != j {
            y[j] += v * x[i];
        }
    }
    y
}

/// Canonical convex program. `p` holds the upper triangle of `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseQP {
    pub p: Triplets,
    pub q: Vec<f64>,
    pub a: Triplets,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
    pub var_names: Option<Vec<String>>,
}

impl SparseQP {
    /// Validates dimensions, bound ordering and positive semidefiniteness of `P`.
    pub fn new(p: Triplets, q: Vec<f64>, a: Triplets, l: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        let qp = Self { p, q, a, l, u, var_names: None };
        qp.validate()?;
        Ok(qp)
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.p.nrows != n || self.p.ncols != n || self.a.ncols != n {
            return Err(Error::DimensionMismatch(format!(
                "P is {}x{}, A has {} columns, q has {n} entries",
                self.p.nrows, self.p.ncols, self.a.ncols
            )));
        }
        if self.u.len() != self.a.nrows || self.l.len() != self.a.nrows {
            return Err(Error::DimensionMismatch(format!(
                "A has {} rows but l, u have {} and {}",
                self.a.nrows,
                self.l.len(),
                self.u.len()
            )));
        }
        if let Some(names) = &self.var_names {
            if names.len() != n {
                return Err(Error::DimensionMismatch("var_names length".into()));
            }
        }
        for (i, (lo, hi)) in self.l.iter().zip(&self.u).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidProblem(format!("row {i}: bounds [{lo}, {hi}]")));
            }
        }
        if self.p.rows.iter().zip(&self.p.cols).any(|(i, j)| i > j) {
            return Err(Error::InvalidProblem("P must be given by its upper triangle".into()));
        }
        if self.q.iter().chain(&self.p.vals).chain(&self.a.vals).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite problem data".into()));
        }
        self.check_psd()
    }

    fn check_psd(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || self.p.nnz() == 0 {
            return Ok(());
        }
        let kd = self.p.rows.iter().zip(&self.p.cols).map(|(i, j)| j - i).max().unwrap_or(0);
        let mut b = BandedSym::zeros(n, kd);
        for k in 0..self.p.nnz() {
            b.add(self.p.cols[k], self.p.rows[k], self.p.vals[k]);
        }
        let scale = (0..n).map(|i| b.get(i, i).abs()).fold(1.0, f64::max);
        for i in 0..n {
            b.add(i, i, 1e-12 * scale);
        }
        b.cholesky().map(|_| ()).map_err(|_| Error::InvalidProblem("P is not positive semidefinite".into()))
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = sym_upper_matvec(&self.p, x);
        0.5 * dot(x, &px) + dot(&self.q, x)
    }

    /// `‖max(l − Ax, Ax − u, 0)‖_∞`.
    pub fn primal_violation(&self, x: &[f64]) -> f64 {
        let ax = self.a.matvec(x);
        ax.iter()
            .zip(self.l.iter().zip(&self.u))
            .map(|(v, (lo, hi))| {
                let below = if is_finite_bound(*lo) { lo - v } else { 0.0 };
                let above = if is_finite_bound(*hi) { v - hi } else { 0.0 };
                below.max(above).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// Returns a copy with the cost replaced by the linear objective `q`.
    pub fn with_linear_objective(&self, q: Vec<f64>) -> SparseQP {
        SparseQP {
            p: Triplets::new(self.n(), self.n()),
            q,
            a: self.a.clone(),
            l: self.l.clone(),
            u: self.u.clone(),
            var_names: self.var_names.clone(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    /// Multipliers with `Px + q + Aᵀy = 0`.
    pub y: Vec<f64>,
    pub obj: f64,
    pub status: SolveStatus,
    pub prim_res: f64,
    pub dual_res: f64,
    pub iters: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub eps_prim: f64,
    pub eps_dual: f64,
    /// Interior-point iteration cap.
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { eps_prim: 1e-9, eps_dual: 1e-9, max_iter: 200, verbose: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Eq,
    Upper,
    Lower,
}

/// Maps the two-sided rows of a [`SparseQP`] onto Clarabel's cone blocks.
#[derive(Debug, Clone)]
struct ConeLayout {
    /// `(original row, kind)` for every Clarabel row, in order.
    rows: Vec<(usize, RowKind)>,
    n_eq: usize,
    n_ineq: usize,
}

impl ConeLayout {
    fn new(qp: &SparseQP) -> Self {
        let mut eq = Vec::new();
        let mut ineq = Vec::new();
        for (i, (&lo, &hi)) in qp.l.iter().zip(&qp.u).enumerate() {
            if lo == hi && is_finite_bound(lo) {
                eq.push((i, RowKind::Eq));
            } else {
                if is_finite_bound(hi) {
                    ineq.push((i, RowKind::Upper));
                }
                if is_finite_bound(lo) {
                    ineq.push((i, RowKind::Lower));
                }
            }
        }
        let (n_eq, n_ineq) = (eq.len(), ineq.len());
        eq.extend(ineq);
        Self { rows: eq, n_eq, n_ineq }
    }

    fn same_pattern(&self, qp: &SparseQP) -> bool {
        let other = ConeLayout::new(qp);
        other.rows == self.rows
    }

    fn matrix(&self, qp: &SparseQP) -> Triplets {
        let mut pos: Vec<Vec<(usize, f64)>> = vec![Vec::new(); qp.m()];
        for (k, &(orig, kind)) in self.rows.iter().enumerate() {
            let s = if kind == RowKind::Lower { -1.0 } else { 1.0 };
            pos[orig].push((k, s));
        }
        let mut t = Triplets::new(self.rows.len(), qp.n());
        for e in 0..qp.a.nnz() {
            for &(k, s) in &pos[qp.a.rows[e]] {
                t.push(k, qp.a.cols[e], s * qp.a.vals[e]);
            }
        }
        t
    }

    fn rhs(&self, qp: &SparseQP) -> Vec<f64> {
        self.rows
            .iter()
            .map(|&(i, kind)| match kind {
                RowKind::Eq | RowKind::Upper => qp.u[i],
                RowKind::Lower => -qp.l[i],
            })
            .collect()
    }

    fn cones(&self) -> Vec<SupportedConeT<f64>> {
        let mut c = Vec::new();
        if self.n_eq > 0 {
            c.push(SupportedConeT::ZeroConeT(self.n_eq));
        }
        if self.n_ineq > 0 {
            c.push(SupportedConeT::NonnegativeConeT(self.n_ineq));
        }
        c
    }

    fn fold_duals(&self, z: &[f64], m: usize) -> Vec<f64> {
        let mut y = vec![0.0; m];
        for (&(i, kind), zk) in self.rows.iter().zip(z) {
            match kind {
                RowKind::Eq | RowKind::Upper => y[i] += zk,
                RowKind::Lower => y[i] -= zk,
            }
        }
        y
    }
}

fn clarabel_settings(s: &SolverSettings) -> DefaultSettings<f64> {
    DefaultSettingsBuilder::default()
        .verbose(s.verbose)
        .max_iter(s.max_iter)
        .tol_gap_abs(1e-11)
        .tol_gap_rel(1e-11)
        .tol_feas(1e-11)
        .tol_ktratio(1e-8)
        .iterative_refinement_reltol(1e-15)
        .iterative_refinement_abstol(1e-15)
        .iterative_refinement_max_iter(30)
        .presolve_enable(false)
        .input_sparse_dropzeros(false)
        .direct_solve_method("qdldl".to_string())
        .max_threads(1)
        .build()
        .expect("static solver settings are valid")
}

/// A Clarabel instance kept alive across objective and bound changes that
/// preserve the sparsity and finiteness pattern of the problem.
pub struct Session {
    qp: SparseQP,
    layout: ConeLayout,
    solver: DefaultSolver<f64>,
    settings: SolverSettings,
}

impl Session {
    pub fn new(qp: &SparseQP, settings: SolverSettings) -> Result<Self> {
        qp.validate()?;
        let layout = ConeLayout::new(qp);
        let p = qp.p.to_csc();
        let a = layout.matrix(qp).to_csc();
        let b = layout.rhs(qp);
        let solver = DefaultSolver::new(&p, &qp.q, &a, &b, &layout.cones(), clarabel_settings(&settings))
            .map_err(|e| Error::Solver(format!("setup failed: {e:?}")))?;
        Ok(Self { qp: qp.clone(), layout, solver, settings })
    }

    pub fn problem(&self) -> &SparseQP {
        &self.qp
    }

    pub fn solve(&mut self) -> Result<SolveReport> {
        self.solver.solve();
        let sol = &self.solver.solution;
        let status = sol.status;
        let x = sol.x.clone();
        let y = self.layout.fold_duals(&sol.z, self.qp.m());
        let iters = sol.iterations;
        report(&self.qp, x, y, status, iters, &self.settings)
    }

    /// Replaces the linear cost and re-solves.
    pub fn solve_with_objective(&mut self, q: &[f64]) -> Result<SolveReport> {
        if q.len() != self.qp.n() {
            return Err(Error::DimensionMismatch("objective length".into()));
        }
        self.solver.update_q(&q.to_vec()).map_err(|e| Error::Solver(format!("objective update rejected: {e:?}")))?;
        self.qp.q = q.to_vec();
        self.solve()
    }

    /// Replaces `A`, `l` and `u` by those of `next`, which must share the
    /// sparsity pattern, the cost and the pattern of finite bounds.
    pub fn update_constraints(&mut self, next: &SparseQP) -> Result<()> {
        next.validate()?;
        let same = next.a.rows == self.qp.a.rows
            && next.a.cols == self.qp.a.cols
            && next.p == self.qp.p
            && self.layout.same_pattern(next);
        if !same {
            return Err(Error::Solver("constraint update changes the problem pattern".into()));
        }
        let a = self.layout.matrix(next).to_csc();
        self.solver.update_A(&a).map_err(|e| Error::Solver(format!("matrix update rejected: {e:?}")))?;
        self.solver
            .update_b(&self.layout.rhs(next))
            .map_err(|e| Error::Solver(format!("bound update rejected: {e:?}")))?;
        self.solver.update_q(&next.q).map_err(|e| Error::Solver(format!("objective update rejected: {e:?}")))?;
        self.qp = next.clone();
        Ok(())
    }

    /// Replaces the row bounds; which bounds are finite must not change.
    pub fn update_bounds(&mut self, l: &[f64], u: &[f64]) -> Result<()> {
        let mut next = self.qp.clone();
        next.l = l.to_vec();
        next.u = u.to_vec();
        next.validate()?;
        if !self.layout.same_pattern(&next) {
            return Err(Error::Solver("bound update changes the row pattern".into()));
        }
        self.solver
            .update_b(&self.layout.rhs(&next))
            .map_err(|e| Error::Solver(format!("bound update rejected: {e:?}")))?;
        self.qp = next;
        Ok(())
    }
}

/// Row-wise backward errors of `(x, y)`.
///
/// The primal value is `max_i viol_i / max(1, |a_i|₁‖x‖∞ + |b_i|)` and the
/// dual value scales each stationarity entry the same way by the magnitudes
/// of the terms that produce it. Both reduce to absolute residuals on
/// well-scaled data. Multipliers of the wrong sign count toward the dual
/// value.
fn residuals(qp: &SparseQP, x: &[f64], y: &[f64]) -> (f64, f64) {
    let xn = norm_inf(x);
    let ax = qp.a.matvec(x);
    let mut row_mag = vec![0.0; qp.m()];
    let mut col_mag = vec![0.0; qp.n()];
    let yn = norm_inf(y);
    for e in 0..qp.a.nnz() {
        row_mag[qp.a.rows[e]] += qp.a.vals[e].abs();
        col_mag[qp.a.cols[e]] += qp.a.vals[e].abs();
    }
    let prim = (0..qp.m())
        .map(|i| {
            let (lo, hi) = (qp.l[i], qp.u[i]);
            let below = if is_finite_bound(lo) { lo - ax[i] } else { 0.0 };
            let above = if is_finite_bound(hi) { ax[i] - hi } else { 0.0 };
            let b = if below > above { lo } else { hi };
            let v = below.max(above).max(0.0);
            if v == 0.0 {
                0.0
            } else {
                v / (row_mag[i] * xn + b.abs()).max(1.0)
            }
        })
        .fold(0.0, f64::max);

    let px = sym_upper_matvec(&qp.p, x);
    let mut p_mag = vec![0.0; qp.n()];
    for k in 0..qp.p.nnz() {
        let (i, j, v) = (qp.p.rows[k], qp.p.cols[k], qp.p.vals[k].abs());
        p_mag[i] += v;
        if i != j {
            p_mag[j] += v;
        }
    }
    let aty = qp.a.matvec_transpose(y);
    let stat = (0..qp.n())
        .map(|j| {
            let r = (px[j] + qp.q[j] + aty[j]).abs();
            let scale = p_mag[j] * xn + qp.q[j].abs() + col_mag[j] * yn;
            if r == 0.0 {
                0.0
            } else {
                r / scale.max(1.0)
            }
        })
        .fold(0.0, f64::max);
    let dual_sign = y
        .iter()
        .zip(qp.l.iter().zip(&qp.u))
        .map(|(&yi, (&lo, &hi))| {
            let wrong_up = if is_finite_bound(hi) { 0.0 } else { yi.max(0.0) };
            let wrong_lo = if is_finite_bound(lo) { 0.0 } else { (-yi).max(0.0) };
            wrong_up.max(wrong_lo) / yn.max(1.0)
        })
        .fold(0.0, f64::max);
    (prim, stat.max(dual_sign))
}

fn report(
    qp: &SparseQP,
    x: Vec<f64>,
    y: Vec<f64>,
    status: SolverStatus,
    iters: u32,
    s: &SolverSettings,
) -> Result<SolveReport> {
    let (prim_res, dual_res) = residuals(qp, &x, &y);
    let accurate = prim_res <= s.eps_prim && dual_res <= s.eps_dual;
    let status = match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved if accurate => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return Err(Error::Solver("problem is unbounded below".into()))
        }
        SolverStatus::NumericalError => return Err(Error::Solver("numerical error".into())),
        _ => SolveStatus::MaxIter,
    };
    let obj = qp.objective(&x);
    Ok(SolveReport { x, y, obj, status, prim_res, dual_res, iters })
}

/// Solves `qp` from scratch.
pub fn solve(qp: &SparseQP, settings: &SolverSettings) -> Result<SolveReport> {
    Session::new(qp, *settings)?.solve()
}

/// Solves `qp` with the linear cost replaced by `new_q`. The previous report
/// is accepted for interface symmetry; interior-point iterations start cold.
pub fn solve_lp_objective_swap(
    qp: &SparseQP,
    new_q: &[f64],
    _warm: &SolveReport,
    settings: &SolverSettings,
) -> Result<SolveReport> {
    let lp = qp.with_linear_objective(new_q.to_vec());
    solve(&lp, settings)
}

fn fmt_f64(v: f64) -> String {
    if v >= INF {
        "inf".into()
    } else if v <= -INF {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| Error::Parse(format!("bad number {s:?}"))),
    }
}

/// Writes the problem as text: a header `qp <n> <m> <nnzP> <nnzA>` followed by
/// one line per entry, tagged `P i j v`, `A i j v`, `q j v`, `l i v`, `u i v`.
/// Indices are zero-based and infinite bounds are spelled `inf`.
pub fn write_dump(qp: &SparseQP, mut out: impl Write) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "qp {} {} {} {}", qp.n(), qp.m(), qp.p.nnz(), qp.a.nnz());
    for k in 0..qp.p.nnz() {
        let _ = writeln!(s, "P {} {} {}", qp.p.rows[k], qp.p.cols[k], fmt_f64(qp.p.vals[k]));
    }
    for k in 0..qp.a.nnz() {
        let _ = writeln!(s, "A {} {} {}", qp.a.rows[k], qp.a.cols[k], fmt_f64(qp.a.vals[k]));
    }
    for (j, v) in qp.q.iter().enumerate() {
        let _ = writeln!(s, "q {j} {}", fmt_f64(*v));
    }
    for (i, v) in qp.l.iter().enumerate() {
        let _ = writeln!(s, "l {i} {}", fmt_f64(*v));
    }
    for (i, v) in qp.u.iter().enumerate() {
        let _ = writeln!(s, "u {i} {}", fmt_f64(*v));
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_dump(input: impl BufRead) -> Result<SparseQP> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty dump".into()))??;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 5 || h[0] != "qp" {
        return Err(Error::Parse(format!("bad header {header:?}")));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad size {s:?}")));
    let (n, m) = (dim(h[1])?, dim(h[2])?);
    let (mut p, mut a) = (Triplets::new(n, n), Triplets::new(m, n));
    let (mut q, mut l, mut u) = (vec![0.0; n], vec![f64::NEG_INFINITY; m], vec![f64::INFINITY; m]);
    for line in lines {
        let line = line?;
        let t: Vec<&str> = line.split_whitespace().collect();
        let idx = |k: usize, bound: usize| -> Result<usize> {
            let v = dim(t.get(k).copied().unwrap_or(""))?;
            if v >= bound {
                return Err(Error::Parse(format!("index out of range in {line:?}")));
            }
            Ok(v)
        };
        let val = |k: usize| parse_f64(t.get(k).copied().unwrap_or(""));
        match t.first().copied() {
            Some("P") => p.push(idx(1, n)?, idx(2, n)?, val(3)?),
            Some("A") => a.push(idx(1, m)?, idx(2, n)?, val(3)?),
            Some("q") => q[idx(1, n)?] = val(2)?,
            Some("l") => l[idx(1, m)?] = val(2)?,
            Some("u") => u[idx(1, m)?] = val(2)?,
            None => {}
            Some(tag) => return Err(Error::Parse(format!("unknown tag {tag:?}"))),
        }
    }
    if p.nnz() != dim(h[3])? || a.nnz() != dim(h[4])? {
        return Err(Error::Parse("entry counts disagree with header".into()));
    }
    SparseQP::new(p, q, a, l, u)
}
