//! McCormick relaxations of the discretized control problem as sparse QPs.
//!
//! Variables are laid out as `[u | w | z | t]`:
//! `u` the `N - 1` interior nodal values, `w` the control cells, `z` one value
//! per coarse cell and `t` one epigraph variable per interior control jump.
//!
//! Rows, in order:
//! 1. state equations `K u + E z = F` (`N - 1` rows),
//! 2. four McCormick rows per coarse cell, grouped by cell,
//! 3. state-average boxes `u_lo ≤ R u ≤ u_hi` (one per coarse cell),
//! 4. control boxes (one per control cell),
//! 5. TV epigraph rows `w_{j+1} − w_j − t_j ≤ 0` then `w_j − w_{j+1} − t_j ≤ 0` per jump.
//!
//! The cost is `½uᵀMu − bᵀu + α Σ t_j`; the constant `½‖u_d‖²` is kept
//! outside the program and added back to reported optima.

use serde::Serialize;

use crate::convex::{self, SolveReport, SolveStatus, SolverSettings, SparseQP, Triplets};
use crate::error::{Error, Result};
use crate::fem1d::{Coupling, FemOperators, PdeProblem, Tracking};
use crate::functions::Function1d;
use crate::grid::{project_avg, tv, CellFunction, NodalFunction, Partition};

/// Per-cell state-average and control bounds defining the relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub coarse: Partition,
    pub u_lo: CellFunction,
    pub u_hi: CellFunction,
    pub w_lo: CellFunction,
    pub w_hi: CellFunction,
}

impl Envelope {
    pub fn new(
        coarse: Partition,
        u_lo: CellFunction,
        u_hi: CellFunction,
        w_lo: CellFunction,
        w_hi: CellFunction,
    ) -> Result<Self> {
        let env = Self { coarse, u_lo, u_hi, w_lo, w_hi };
        env.validate()?;
        Ok(env)
    }

    pub fn uniform(coarse: Partition, u_lo: f64, u_hi: f64, w_lo: f64, w_hi: f64) -> Result<Self> {
        Self::new(
            coarse,
            CellFunction::constant(coarse, u_lo),
            CellFunction::constant(coarse, u_hi),
            CellFunction::constant(coarse, w_lo),
            CellFunction::constant(coarse, w_hi),
        )
    }

    /// Cell averages of pointwise state bounds.
    pub fn from_state_bounds(
        coarse: Partition,
        u_min: &NodalFunction,
        u_max: &NodalFunction,
        w_lo: f64,
        w_hi: f64,
    ) -> Result<Self> {
        Self::new(
            coarse,
            project_avg(u_min, coarse)?,
            project_avg(u_max, coarse)?,
            CellFunction::constant(coarse, w_lo),
            CellFunction::constant(coarse, w_hi),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for f in [&self.u_lo, &self.u_hi, &self.w_lo, &self.w_hi] {
            if f.partition() != self.coarse {
                return Err(Error::SpecMismatch("envelope bounds live on different grids".into()));
            }
            if f.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidProblem("envelope bounds must be finite".into()));
            }
        }
        for i in 0..self.coarse.n_cells() {
            if self.u_lo.values()[i] > self.u_hi.values()[i] {
                return Err(Error::InfeasibleEnvelope(format!(
                    "state bounds cross on cell {i}: {} > {}",
                    self.u_lo.values()[i],
                    self.u_hi.values()[i]
                )));
            }
            if self.w_lo.values()[i] > self.w_hi.values()[i] {
                return Err(Error::InvalidProblem(format!("control bounds cross on cell {i}")));
            }
        }
        Ok(())
    }

    /// Largest change of any state bound relative to `other`.
    pub fn max_state_movement(&self, other: &Envelope) -> f64 {
        let d = |a: &CellFunction, b: &CellFunction| {
            a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        };
        d(&self.u_lo, &other.u_lo).max(d(&self.u_hi, &other.u_hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RelaxationKind {
    /// Cellwise relaxation on the FEM grid itself.
    PointwiseMcC,
    /// Fine-grid control with averaged control in the McCormick rows.
    AveragedMcCh,
    /// Control discretized on the coarse grid.
    FullyAveragedMcChh,
}

/// Tracking target given either declaratively or by nodal values.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Function(Function1d),
    Nodal(NodalFunction),
}

impl Target {
    pub fn tracking(&self, ops: &FemOperators) -> Result<Tracking> {
        match self {
            Target::Function(f) => Ok(Tracking::from_function(ops, f)),
            Target::Nodal(u) => Tracking::from_nodal(ops, u),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Target::Function(f) => f.eval(x),
            Target::Nodal(u) => u.eval(x),
        }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Target::Function(f) => f.breakpoints(),
            Target::Nodal(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelaxationSpec {
    pub kind: RelaxationKind,
    pub prob: PdeProblem,
    pub env: Envelope,
    pub alpha: f64,
    pub u_d: Target,
}

impl RelaxationSpec {
    pub fn fem_grid(&self) -> Partition {
        self.prob.fem_grid
    }

    /// Grid on which the control variables live.
    pub fn control_grid(&self) -> Partition {
        match self.kind {
            RelaxationKind::FullyAveragedMcChh => self.env.coarse,
            RelaxationKind::AveragedMcCh => self.prob.control_grid,
            RelaxationKind::PointwiseMcC => self.prob.fem_grid,
        }
    }

    pub fn coupling(&self) -> Coupling {
        Coupling::Averaged(self.env.coarse)
    }

    pub fn with_envelope(&self, env: Envelope) -> Self {
        Self { env, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.prob.validate()?;
        self.env.validate()?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidProblem(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        let fem = self.prob.fem_grid;
        let coarse = self.env.coarse;
        if !fem.is_refinement_of(&coarse) {
            return Err(Error::SpecMismatch(format!(
                "coarse grid with {} cells does not divide the FEM grid with {} cells",
                coarse.n_cells(),
                fem.n_cells()
            )));
        }
        match self.kind {
            RelaxationKind::PointwiseMcC => {
                if coarse != fem {
                    return Err(Error::SpecMismatch("pointwise relaxation needs coarse == FEM grid".into()));
                }
            }
            RelaxationKind::AveragedMcCh => {
                if !self.prob.control_grid.is_refinement_of(&coarse) {
                    return Err(Error::SpecMismatch("control grid must refine the averaging grid".into()));
                }
            }
            RelaxationKind::FullyAveragedMcChh => {}
        }
        if let Target::Nodal(u) = &self.u_d {
            if u.partition() != fem {
                return Err(Error::SpecMismatch("nodal target must live on the FEM grid".into()));
            }
        }
        Ok(())
    }
}

/// Offsets of every variable and row block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexMap {
    pub kind: RelaxationKind,
    pub fem_cells: usize,
    pub coarse_cells: usize,
    pub control_cells: usize,
    pub u_offset: usize,
    pub n_u: usize,
    pub w_offset: usize,
    pub n_w: usize,
    pub z_offset: usize,
    pub n_z: usize,
    pub t_offset: usize,
    pub n_t: usize,
    pub state_rows: usize,
    pub mccormick_rows: usize,
    pub ubox_rows: usize,
    pub wbox_rows: usize,
    pub tv_rows: usize,
    pub n_vars: usize,
    pub n_rows: usize,
}

impl IndexMap {
    fn new(spec: &RelaxationSpec, with_tv: bool) -> Self {
        let fem_cells = spec.prob.fem_grid.n_cells();
        let coarse_cells = spec.env.coarse.n_cells();
        let control_cells = spec.control_grid().n_cells();
        let n_u = fem_cells - 1;
        let n_w = control_cells;
        let n_z = coarse_cells;
        let n_t = if with_tv { control_cells - 1 } else { 0 };
        let state_rows = n_u;
        let mccormick_rows = 4 * coarse_cells;
        let ubox_rows = coarse_cells;
        let wbox_rows = control_cells;
        let tv_rows = 2 * n_t;
        Self {
            kind: spec.kind,
            fem_cells,
            coarse_cells,
            control_cells,
            u_offset: 0,
            n_u,
            w_offset: n_u,
            n_w,
            z_offset: n_u + n_w,
            n_z,
            t_offset: n_u + n_w + n_z,
            n_t,
            state_rows,
            mccormick_rows,
            ubox_rows,
            wbox_rows,
            tv_rows,
            n_vars: n_u + n_w + n_z + n_t,
            n_rows: state_rows + mccormick_rows + ubox_rows + wbox_rows + tv_rows,
        }
    }

    pub fn mccormick_row(&self, cell: usize, k: usize) -> usize {
        self.state_rows + 4 * cell + k
    }

    pub fn ubox_row(&self, cell: usize) -> usize {
        self.state_rows + self.mccormick_rows + cell
    }

    pub fn wbox_row(&self, j: usize) -> usize {
        self.state_rows + self.mccormick_rows + self.ubox_rows + j
    }

    pub fn tv_row(&self, j: usize, sign: usize) -> usize {
        self.state_rows + self.mccormick_rows + self.ubox_rows + self.wbox_rows + 2 * j + sign
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("index map serializes")
    }
}

/// Assembled relaxation: the program, its layout and the constant cost term.
#[derive(Debug, Clone)]
pub struct Relaxation {
    pub qp: SparseQP,
    pub index: IndexMap,
    pub constant: f64,
}

impl Relaxation {
    pub fn u<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.index.u_offset..self.index.u_offset + self.index.n_u]
    }

    pub fn w<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.index.w_offset..self.index.w_offset + self.index.n_w]
    }

    pub fn z<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.index.z_offset..self.index.z_offset + self.index.n_z]
    }

    /// Linear objective selecting the average of the state on a coarse cell.
    pub fn cell_average_objective(&self, spec: &RelaxationSpec, cell: usize, sign: f64) -> Result<Vec<f64>> {
        let ops = spec.prob.operators()?;
        let r = ops.avg_map(spec.env.coarse)?;
        let mut q = vec![0.0; self.index.n_vars];
        for &(j, v) in r.row(cell) {
            q[self.index.u_offset + j] = sign * v;
        }
        Ok(q)
    }
}

/// Builds the relaxation program.
pub fn build(spec: &RelaxationSpec) -> Result<Relaxation> {
    build_impl(spec, true)
}

/// The relaxation without the TV epigraph block: same `u`, `w`, `z`
/// feasible set, no `t` variables. Bound tightening runs on this program.
pub fn build_feasible_set(spec: &RelaxationSpec) -> Result<Relaxation> {
    build_impl(spec, false)
}

fn build_impl(spec: &RelaxationSpec, with_tv: bool) -> Result<Relaxation> {
    spec.validate()?;
    let ops = spec.prob.operators()?;
    let idx = IndexMap::new(spec, with_tv);
    let coarse = spec.env.coarse;
    let control = spec.control_grid();
    let e = ops.cell_load(coarse)?;
    let r = ops.avg_map(coarse)?;
    let tracking = spec.u_d.tracking(&ops)?;
    let inf = f64::INFINITY;

    let mut a = Triplets::new(idx.n_rows, idx.n_vars);
    let mut l = Vec::with_capacity(idx.n_rows);
    let mut u = Vec::with_capacity(idx.n_rows);

    // state equations
    let k = ops.stiffness();
    let f = ops.function_load(&spec.prob.f);
    let mut e_by_dof: Vec<Vec<(usize, f64)>> = vec![Vec::new(); idx.n_u];
    for (i, row) in e.rows().iter().enumerate() {
        for &(j, v) in row {
            e_by_dof[j].push((i, v));
        }
    }
    for j in 0..idx.n_u {
        if j > 0 {
            a.push(j, idx.u_offset + j - 1, k.off[j - 1]);
        }
        a.push(j, idx.u_offset + j, k.diag[j]);
        if j + 1 < idx.n_u {
            a.push(j, idx.u_offset + j + 1, k.off[j]);
        }
        for &(i, v) in &e_by_dof[j] {
            a.push(j, idx.z_offset + i, v);
        }
        l.push(f[j]);
        u.push(f[j]);
    }

    // averaged control per coarse cell as (control index, weight)
    let ratio_w: Vec<Vec<(usize, f64)>> = if control == coarse {
        (0..coarse.n_cells()).map(|i| vec![(i, 1.0)]).collect()
    } else {
        let m = control.ratio_to(&coarse)?;
        (0..coarse.n_cells()).map(|i| (i * m..(i + 1) * m).map(|j| (j, 1.0 / m as f64)).collect()).collect()
    };

    // McCormick rows: z − a·ŵ − b·ū  compared with −a·b
    for i in 0..coarse.n_cells() {
        let (ul, uu) = (spec.env.u_lo.values()[i], spec.env.u_hi.values()[i]);
        let (wl, wu) = (spec.env.w_lo.values()[i], spec.env.w_hi.values()[i]);
        let rows = [(ul, wl, true), (uu, wu, true), (uu, wl, false), (ul, wu, false)];
        for (kk, &(cu, cw, lower)) in rows.iter().enumerate() {
            let row = idx.mccormick_row(i, kk);
            a.push(row, idx.z_offset + i, 1.0);
            for &(j, wt) in &ratio_w[i] {
                a.push(row, idx.w_offset + j, -cu * wt);
            }
            for &(j, v) in r.row(i) {
                a.push(row, idx.u_offset + j, -cw * v);
            }
            if lower {
                l.push(-cu * cw);
                u.push(inf);
            } else {
                l.push(-inf);
                u.push(-cu * cw);
            }
        }
    }

    for i in 0..coarse.n_cells() {
        let row = idx.ubox_row(i);
        for &(j, v) in r.row(i) {
            a.push(row, idx.u_offset + j, v);
        }
        l.push(spec.env.u_lo.values()[i]);
        u.push(spec.env.u_hi.values()[i]);
    }

    let per_coarse = control.n_cells() / coarse.n_cells().min(control.n_cells());
    for j in 0..control.n_cells() {
        let row = idx.wbox_row(j);
        a.push(row, idx.w_offset + j, 1.0);
        let ci = if control.n_cells() >= coarse.n_cells() { j / per_coarse } else { j };
        l.push(spec.env.w_lo.values()[ci]);
        u.push(spec.env.w_hi.values()[ci]);
    }

    for j in 0..idx.n_t {
        for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
            let row = idx.tv_row(j, s);
            a.push(row, idx.w_offset + j + 1, sign);
            a.push(row, idx.w_offset + j, -sign);
            a.push(row, idx.t_offset + j, -1.0);
            l.push(-inf);
            u.push(0.0);
        }
    }

    let mass = ops.mass();
    let mut p = Triplets::new(idx.n_vars, idx.n_vars);
    for j in 0..idx.n_u {
        p.push(idx.u_offset + j, idx.u_offset + j, mass.diag[j]);
        if j + 1 < idx.n_u {
            p.push(idx.u_offset + j, idx.u_offset + j + 1, mass.off[j]);
        }
    }
    let mut q = vec![0.0; idx.n_vars];
    for j in 0..idx.n_u {
        q[idx.u_offset + j] = -tracking.b[j];
    }
    for j in 0..idx.n_t {
        q[idx.t_offset + j] = spec.alpha;
    }

    let mut qp = SparseQP::new(p, q, a, l, u)?;
    qp.var_names = Some(variable_names(&idx));
    Ok(Relaxation { qp, index: idx, constant: tracking.constant })
}

/// Feasible set of the relaxation with the state eliminated.
///
/// The state equation gives `u = K⁻¹(f − E z)`, so the cell averages are
/// `ū = g − G z` with a dense `G`. The program has variables `(w, z)` and the
/// McCormick, state-box and control-box rows of [`build_feasible_set`].
#[derive(Debug, Clone)]
pub struct ReducedFeasibleSet {
    pub qp: SparseQP,
    pub n_w: usize,
    pub n_z: usize,
    /// Cell averages of the state at `z = 0`.
    pub g: Vec<f64>,
    /// Row-major `n_z × n_z` map from `z` to the change of the cell averages.
    pub gmat: Vec<f64>,
}

impl ReducedFeasibleSet {
    /// Cost whose optimum plus `sign·g[cell]` is the minimum of `sign·ū[cell]`.
    pub fn cell_average_objective(&self, cell: usize, sign: f64) -> Vec<f64> {
        let mut q = vec![0.0; self.n_w + self.n_z];
        for k in 0..self.n_z {
            q[self.n_w + k] = -sign * self.gmat[cell * self.n_z + k];
        }
        q
    }

    pub fn state_averages(&self, x: &[f64]) -> Vec<f64> {
        let z = &x[self.n_w..];
        (0..self.n_z)
            .map(|i| self.g[i] - (0..self.n_z).map(|k| self.gmat[i * self.n_z + k] * z[k]).sum::<f64>())
            .collect()
    }
}

pub fn build_reduced_feasible_set(spec: &RelaxationSpec) -> Result<ReducedFeasibleSet> {
    spec.validate()?;
    let ops = spec.prob.operators()?;
    let coarse = spec.env.coarse;
    let control = spec.control_grid();
    let e = ops.cell_load(coarse)?;
    let r = ops.avg_map(coarse)?;
    let fac = ops.stiffness().factor()?;
    let (n_w, n_z) = (control.n_cells(), coarse.n_cells());
    let n_u = ops.stiffness().n();
    let avg = |u: &[f64], i: usize| r.row(i).iter().map(|&(j, v)| v * u[j]).sum::<f64>();

    let u0 = fac.solve(&ops.function_load(&spec.prob.f));
    let g: Vec<f64> = (0..n_z).map(|i| avg(&u0, i)).collect();
    let mut gmat = vec![0.0; n_z * n_z];
    for k in 0..n_z {
        let mut col = vec![0.0; n_u];
        for &(j, v) in e.row(k) {
            col[j] += v;
        }
        let du = fac.solve(&col);
        for i in 0..n_z {
            gmat[i * n_z + k] = avg(&du, i);
        }
    }

    let ratio_w: Vec<Vec<(usize, f64)>> = if control == coarse {
        (0..n_z).map(|i| vec![(i, 1.0)]).collect()
    } else {
        let m = control.ratio_to(&coarse)?;
        (0..n_z).map(|i| (i * m..(i + 1) * m).map(|j| (j, 1.0 / m as f64)).collect()).collect()
    };

    let inf = f64::INFINITY;
    let n_rows = 5 * n_z + n_w;
    let mut a = Triplets::new(n_rows, n_w + n_z);
    let (mut l, mut u) = (Vec::with_capacity(n_rows), Vec::with_capacity(n_rows));
    let mut row = 0;
    for i in 0..n_z {
        let (ul, uu) = (spec.env.u_lo.values()[i], spec.env.u_hi.values()[i]);
        let (wl, wu) = (spec.env.w_lo.values()[i], spec.env.w_hi.values()[i]);
        for (cu, cw, lower) in [(ul, wl, true), (uu, wu, true), (uu, wl, false), (ul, wu, false)] {
            // z − cu·ŵ − cw·(g − G z) against −cu·cw
            for k in 0..n_z {
                let v = cw * gmat[i * n_z + k] + if k == i { 1.0 } else { 0.0 };
                a.push(row, n_w + k, v);
            }
            for &(j, wt) in &ratio_w[i] {
                a.push(row, j, -cu * wt);
            }
            let rhs = -cu * cw + cw * g[i];
            if lower {
                l.push(rhs);
                u.push(inf);
            } else {
                l.push(-inf);
                u.push(rhs);
            }
            row += 1;
        }
    }
    for i in 0..n_z {
        for k in 0..n_z {
            a.push(row, n_w + k, -gmat[i * n_z + k]);
        }
        l.push(spec.env.u_lo.values()[i] - g[i]);
        u.push(spec.env.u_hi.values()[i] - g[i]);
        row += 1;
    }
    let per_coarse = (n_w / n_z).max(1);
    for j in 0..n_w {
        a.push(row, j, 1.0);
        let ci = if n_w >= n_z { j / per_coarse } else { j };
        l.push(spec.env.w_lo.values()[ci]);
        u.push(spec.env.w_hi.values()[ci]);
        row += 1;
    }
    let qp = SparseQP::new(Triplets::new(n_w + n_z, n_w + n_z), vec![0.0; n_w + n_z], a, l, u)?;
    Ok(ReducedFeasibleSet { qp, n_w, n_z, g, gmat })
}

fn variable_names(idx: &IndexMap) -> Vec<String> {
    let mut v = Vec::with_capacity(idx.n_vars);
    v.extend((0..idx.n_u).map(|j| format!("u[{}]", j + 1)));
    v.extend((0..idx.n_w).map(|j| format!("w[{j}]")));
    v.extend((0..idx.n_z).map(|j| format!("z[{j}]")));
    v.extend((0..idx.n_t).map(|j| format!("t[{j}]")));
    v
}

/// Relaxed optimum with its primal parts.
#[derive(Debug, Clone)]
pub struct LowerBound {
    pub m: f64,
    pub report: SolveReport,
    pub u: NodalFunction,
    pub w: CellFunction,
    pub z: CellFunction,
}

pub fn lower_bound_solve(spec: &RelaxationSpec) -> Result<LowerBound> {
    lower_bound_solve_with(spec, &SolverSettings::default())
}

pub fn lower_bound_solve_with(spec: &RelaxationSpec, settings: &SolverSettings) -> Result<LowerBound> {
    let relax = build(spec)?;
    let report = convex::solve(&relax.qp, settings)?;
    match report.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::InfeasibleEnvelope("relaxation is infeasible".into())),
        SolveStatus::MaxIter => {
            return Err(Error::Solver(format!(
                "relaxation not solved to tolerance (prim {:e}, dual {:e})",
                report.prim_res, report.dual_res
            )))
        }
    }
    let m = report.obj + relax.constant;
    let u = NodalFunction::from_interior(spec.fem_grid(), relax.u(&report.x))?;
    let w = CellFunction::new(spec.control_grid(), relax.w(&report.x).to_vec())?;
    let z = CellFunction::new(spec.env.coarse, relax.z(&report.x).to_vec())?;
    Ok(LowerBound { m, report, u, w, z })
}

/// The point `(u, w, z, t)` with `u` the averaged state for `w`,
/// `z_i = (P_h u)_i (P_h w)_i` and `t_j = |w_{j+1} − w_j|`.
pub fn embedded_point(spec: &RelaxationSpec, w: &CellFunction) -> Result<Vec<f64>> {
    spec.validate()?;
    let control = spec.control_grid();
    let w = project_avg(w, control)?;
    let relax_idx = IndexMap::new(spec, true);
    let coarse = spec.env.coarse;
    let u = crate::fem1d::solve_state_with(&spec.prob, &w, spec.coupling())?;
    let ops = spec.prob.operators()?;
    let ru = ops.avg_map(coarse)?.apply(u.interior());
    let pw = project_avg(&w, coarse)?;
    let mut x = vec![0.0; relax_idx.n_vars];
    x[..relax_idx.n_u].copy_from_slice(u.interior());
    x[relax_idx.w_offset..relax_idx.w_offset + relax_idx.n_w].copy_from_slice(w.values());
    for i in 0..coarse.n_cells() {
        x[relax_idx.z_offset + i] = ru[i] * pw.values()[i];
    }
    for j in 0..relax_idx.n_t {
        x[relax_idx.t_offset + j] = (w.values()[j + 1] - w.values()[j]).abs();
    }
    Ok(x)
}

/// Largest constraint violation of the embedded point of `w`.
pub fn embed_check(spec: &RelaxationSpec, w: &CellFunction) -> Result<f64> {
    let relax = build(spec)?;
    let x = embedded_point(spec, w)?;
    Ok(relax.qp.primal_violation(&x))
}

/// Objective `½‖u − u_d‖² + α·TV(w)` of the relaxation at a point.
pub fn relaxation_objective(relax: &Relaxation, x: &[f64]) -> f64 {
    relax.qp.objective(x) + relax.constant
}

/// True objective of a control for the averaged state equation of `spec`.
pub fn averaged_objective(spec: &RelaxationSpec, w: &CellFunction) -> Result<f64> {
    let ops = spec.prob.operators()?;
    let tracking = spec.u_d.tracking(&ops)?;
    let u = crate::fem1d::solve_state_with(&spec.prob, w, spec.coupling())?;
    Ok(tracking.value(&ops, u.interior()) + spec.alpha * tv(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, nh: usize, kind: RelaxationKind) -> RelaxationSpec {
        let fem = Partition::new(n).unwrap();
        let coarse = Partition::new(nh).unwrap();
        let control = if kind == RelaxationKind::FullyAveragedMcChh { coarse } else { fem };
        RelaxationSpec {
            kind,
            prob: PdeProblem::new(Function1d::constant(6.0), -4.0, 4.0, fem, control).unwrap(),
            env: Envelope::uniform(coarse, -5.0444, 5.0444, -4.0, 4.0).unwrap(),
            alpha: 2.5e-4,
            u_d: Target::Function(Function1d::reference_target()),
        }
    }

    #[test]
    fn layout_counts() {
        let s = spec(2048, 8, RelaxationKind::FullyAveragedMcChh);
        let r = build(&s).unwrap();
        assert_eq!(r.index.n_vars, 2047 + 8 + 8 + 7);
        assert_eq!(r.index.n_rows, 2047 + 32 + 8 + 8 + 14);
        assert_eq!(r.qp.m(), r.index.n_rows);
        assert_eq!(r.qp.n(), r.index.n_vars);
    }

    #[test]
    fn embedded_points_are_feasible() {
        for kind in [RelaxationKind::FullyAveragedMcChh, RelaxationKind::AveragedMcCh] {
            let s = spec(64, 8, kind);
            let w = CellFunction::from_fn(s.control_grid(), |i| ((i * 7) % 9) as f64 - 4.0);
            assert!(embed_check(&s, &w).unwrap() <= 1e-10);
            let up = CellFunction::constant(s.control_grid(), 4.0);
            assert!(embed_check(&s, &up).unwrap() <= 1e-10);
            let out = CellFunction::constant(s.control_grid(), 4.5);
            assert!(embed_check(&s, &out).unwrap() > 0.1);
        }
    }

    #[test]
    fn degenerate_envelope_pins_the_state() {
        let fem = Partition::new(32).unwrap();
        let coarse = Partition::new(32).unwrap();
        let s = RelaxationSpec {
            kind: RelaxationKind::PointwiseMcC,
            prob: PdeProblem::new(Function1d::constant(0.0), 0.0, 0.0, fem, fem).unwrap(),
            env: Envelope::uniform(coarse, 0.0, 0.0, 0.0, 0.0).unwrap(),
            alpha: 1.0,
            u_d: Target::Function(Function1d::reference_target()),
        };
        let lb = lower_bound_solve(&s).unwrap();
        let expected = 0.5 * Function1d::reference_target().square_integral();
        assert!((lb.m - expected).abs() < 1e-8, "{} vs {expected}", lb.m);
        assert!(lb.u.linf_norm() < 1e-8);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let mut s = spec(64, 8, RelaxationKind::PointwiseMcC);
        assert!(matches!(build(&s), Err(Error::SpecMismatch(_))));
        s.kind = RelaxationKind::FullyAveragedMcChh;
        s.env = Envelope::uniform(Partition::new(6).unwrap(), -1.0, 1.0, -4.0, 4.0).unwrap();
        assert!(matches!(build(&s), Err(Error::SpecMismatch(_))));
    }
}
