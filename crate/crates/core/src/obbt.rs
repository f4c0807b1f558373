//! Optimization-based bound tightening of the state-average envelope.
//!
//! Every sweep minimizes, cell by cell, the average of the state over the
//! feasible set of the relaxation, then maximizes it. The optimum minus (plus)
//! a small safeguard becomes the new lower (upper) bound. Sweeps stop once a
//! full lo-then-hi pass moves no bound by more than `sweep_tol`.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::convex::{Session, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::relaxation::{build_reduced_feasible_set, lower_bound_solve_with, Envelope, RelaxationSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepOrder {
    /// All lower bounds in ascending cell order, then all upper bounds.
    LoThenHi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepMode {
    /// The lower-bound pass and then the upper-bound pass, each over the
    /// feasible set at the start of the pass.
    Sequential,
    /// Both passes over the sweep-start feasible set, all cells concurrently.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObbtSettings {
    pub safeguard: f64,
    pub sweep_tol: f64,
    pub max_sweeps: usize,
    pub order: SweepOrder,
    pub mode: SweepMode,
    pub solver: SolverSettings,
}

impl Default for ObbtSettings {
    fn default() -> Self {
        Self {
            safeguard: 1e-7,
            sweep_tol: 1e-6,
            max_sweeps: 50,
            order: SweepOrder::LoThenHi,
            mode: SweepMode::Sequential,
            solver: SolverSettings::default(),
        }
    }
}

impl ObbtSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.safeguard > 0.0) {
            return Err(Error::Config("OBBT safeguard must be positive".into()));
        }
        if !(self.sweep_tol > self.safeguard) {
            return Err(Error::Config("OBBT sweep tolerance must exceed the safeguard".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Config("OBBT needs at least one sweep".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Lo,
    Hi,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundUpdate {
    pub sweep: usize,
    pub cell: usize,
    pub side: Side,
    pub old: f64,
    pub new: f64,
    /// Optimal value of the bounding LP before the safeguard is applied.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub max_movement: f64,
    /// Relaxation optimum on the envelope at the end of the sweep.
    pub lower_bound: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ObbtTrace {
    pub sweeps: Vec<SweepRecord>,
    pub updates: Vec<BoundUpdate>,
    pub env: Envelope,
}

impl ObbtTrace {
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "sweep,cell,side,old,new,objective")?;
        for u in &self.updates {
            let side = match u.side {
                Side::Lo => "lo",
                Side::Hi => "hi",
            };
            writeln!(out, "{},{},{side},{:e},{:e},{:e}", u.sweep, u.cell, u.old, u.new, u.objective)?;
        }
        Ok(())
    }

    /// Per-sweep summary; wall times are left out so the file is reproducible.
    pub fn write_sweeps_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "sweep,max_movement,lower_bound")?;
        for s in &self.sweeps {
            writeln!(out, "{},{:e},{:e}", s.sweep, s.max_movement, s.lower_bound)?;
        }
        Ok(())
    }

    /// Largest decrease of the lower-bound objective between consecutive
    /// sweeps; zero for a monotone trace.
    pub fn max_objective_decrease(&self) -> f64 {
        self.sweeps.windows(2).map(|w| (w[0].lower_bound - w[1].lower_bound).max(0.0)).fold(0.0, f64::max)
    }
}

/// Optima of the averaged state over the feasible set of `spec` on every
/// listed `(cell, side)`: minimized for `Side::Lo`, maximized for `Side::Hi`.
/// One solver instance serves all of them by swapping the cost.
fn bound_lps(spec: &RelaxationSpec, jobs: &[(usize, Side)], solver: SolverSettings) -> Result<Vec<f64>> {
    let set = build_reduced_feasible_set(spec)?;
    let mut session: Option<Session> = None;
    let mut out = Vec::with_capacity(jobs.len());
    for &(cell, side) in jobs {
        let sign = if side == Side::Lo { 1.0 } else { -1.0 };
        let q = set.cell_average_objective(cell, sign);
        let rep = match session.as_mut() {
            Some(s) => s.solve_with_objective(&q)?,
            None => session.insert(Session::new(&set.qp.with_linear_objective(q), solver)?).solve()?,
        };
        match rep.status {
            SolveStatus::Optimal => out.push(sign * rep.obj + set.g[cell]),
            SolveStatus::Infeasible => {
                return Err(Error::InfeasibleEnvelope(format!(
                    "bounding LP for cell {cell} is infeasible; the safeguard is too small"
                )))
            }
            SolveStatus::MaxIter => {
                return Err(Error::Solver(format!(
                    "bounding LP for cell {cell} not solved to tolerance (prim {:e}, dual {:e})",
                    rep.prim_res, rep.dual_res
                )))
            }
        }
    }
    Ok(out)
}

fn set_bound(env: &mut Envelope, cell: usize, side: Side, value: f64) -> Result<f64> {
    let slot = match side {
        Side::Lo => &mut env.u_lo.values_mut()[cell],
        Side::Hi => &mut env.u_hi.values_mut()[cell],
    };
    let old = *slot;
    *slot = value;
    if env.u_lo.values()[cell] > env.u_hi.values()[cell] {
        return Err(Error::InfeasibleEnvelope(format!(
            "bounds crossed on cell {cell}: {} > {}",
            env.u_lo.values()[cell],
            env.u_hi.values()[cell]
        )));
    }
    Ok(old)
}

/// Applies the optima of `jobs` to `env` and returns the largest movement.
fn apply(
    env: &mut Envelope,
    jobs: &[(usize, Side)],
    objectives: Vec<f64>,
    sweep: usize,
    safeguard: f64,
    updates: &mut Vec<BoundUpdate>,
) -> Result<f64> {
    let mut moved = 0.0f64;
    for (&(cell, side), objective) in jobs.iter().zip(objectives) {
        let new = if side == Side::Lo { objective - safeguard } else { objective + safeguard };
        let old = set_bound(env, cell, side, new)?;
        moved = moved.max((new - old).abs());
        updates.push(BoundUpdate { sweep, cell, side, old, new, objective });
    }
    Ok(moved)
}

fn sweep_once(
    spec: &RelaxationSpec,
    env: &mut Envelope,
    sweep: usize,
    settings: &ObbtSettings,
    updates: &mut Vec<BoundUpdate>,
) -> Result<f64> {
    let n = env.coarse.n_cells();
    let passes: Vec<Vec<(usize, Side)>> = match settings.order {
        SweepOrder::LoThenHi => {
            [Side::Lo, Side::Hi].into_iter().map(|side| (0..n).map(|cell| (cell, side)).collect()).collect()
        }
    };
    let mut moved = 0.0f64;
    match settings.mode {
        SweepMode::Sequential => {
            for jobs in &passes {
                let objectives = bound_lps(&spec.with_envelope(env.clone()), jobs, settings.solver)?;
                moved = moved.max(apply(env, jobs, objectives, sweep, settings.safeguard, updates)?);
            }
        }
        SweepMode::Parallel => {
            let start = spec.with_envelope(env.clone());
            let jobs: Vec<(usize, Side)> = passes.concat();
            let objectives = crate::with_thread_pool(|| {
                jobs.par_iter()
                    .map(|&job| bound_lps(&start, &[job], settings.solver).map(|v| v[0]))
                    .collect::<Result<Vec<f64>>>()
            })?;
            moved = apply(env, &jobs, objectives, sweep, settings.safeguard, updates)?;
        }
    }
    Ok(moved)
}

/// Runs bound-tightening sweeps on the envelope of `spec`.
pub fn tighten(spec: &RelaxationSpec, settings: &ObbtSettings) -> Result<(Envelope, ObbtTrace)> {
    settings.validate()?;
    spec.validate()?;
    let mut env = spec.env.clone();
    let mut sweeps = Vec::new();
    let mut updates = Vec::new();
    for sweep in 1..=settings.max_sweeps {
        let clock = Instant::now();
        let moved = sweep_once(spec, &mut env, sweep, settings, &mut updates)?;
        let lb = lower_bound_solve_with(&spec.with_envelope(env.clone()), &settings.solver)?;
        sweeps.push(SweepRecord {
            sweep,
            max_movement: moved,
            lower_bound: lb.m,
            seconds: clock.elapsed().as_secs_f64(),
        });
        if moved <= settings.sweep_tol {
            break;
        }
    }
    let trace = ObbtTrace { sweeps, updates, env: env.clone() };
    Ok((env, trace))
}

#[derive(Debug, Clone)]
pub struct ObbtOutcome {
    /// Relaxation optimum on the tightened envelope.
    pub m: f64,
    /// Relaxation optimum on the initial envelope.
    pub m_before: f64,
    pub env: Envelope,
    pub trace: ObbtTrace,
}

pub fn lower_bound_after_obbt(spec: &RelaxationSpec, settings: &ObbtSettings) -> Result<ObbtOutcome> {
    let before = lower_bound_solve_with(spec, &settings.solver)?;
    let (env, trace) = tighten(spec, settings)?;
    let m = trace.sweeps.last().map(|s| s.lower_bound).unwrap_or(before.m);
    Ok(ObbtOutcome { m, m_before: before.m, env, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex;
    use crate::fem1d::PdeProblem;
    use crate::functions::Function1d;
    use crate::grid::{CellFunction, Partition};
    use crate::relaxation::{build_feasible_set, embed_check, RelaxationKind, Target};
    use nalgebra::{DMatrix, DVector};

    fn spec(n: usize, nh: usize) -> RelaxationSpec {
        let fem = Partition::new(n).unwrap();
        let coarse = Partition::new(nh).unwrap();
        RelaxationSpec {
            kind: RelaxationKind::FullyAveragedMcChh,
            prob: PdeProblem::new(Function1d::constant(6.0), -4.0, 4.0, fem, coarse).unwrap(),
            env: Envelope::uniform(coarse, -5.0444, 5.0444, -4.0, 4.0).unwrap(),
            alpha: 2.5e-4,
            u_d: Target::Function(Function1d::reference_target()),
        }
    }

    #[test]
    fn reduced_bounds_match_the_sparse_program() {
        let s = spec(64, 4);
        let full = build_feasible_set(&s).unwrap();
        for cell in 0..4 {
            for side in [Side::Lo, Side::Hi] {
                let sign = if side == Side::Lo { 1.0 } else { -1.0 };
                let q = full.cell_average_objective(&s, cell, sign).unwrap();
                let rep = convex::solve(&full.qp.with_linear_objective(q), &SolverSettings::default()).unwrap();
                assert_eq!(rep.status, SolveStatus::Optimal);
                let reduced = bound_lps(&s, &[(cell, side)], SolverSettings::default()).unwrap()[0];
                assert!((sign * rep.obj - reduced).abs() < 1e-8, "{cell} {side:?}: {} vs {reduced}", sign * rep.obj);
            }
        }
    }

    /// Minimum of `c·x + c0` over `{x : a x ≤ b}` by visiting every vertex.
    fn vertex_minimum(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
        let n = c.len();
        let m = a.len();
        let mut best = f64::INFINITY;
        let mut pick: Vec<usize> = (0..n).collect();
        loop {
            let mat = DMatrix::from_fn(n, n, |i, j| a[pick[i]][j]);
            let rhs = DVector::from_fn(n, |i, _| b[pick[i]]);
            if let Some(x) = mat.lu().solve(&rhs) {
                let ok = (0..m).all(|r| (0..n).map(|j| a[r][j] * x[j]).sum::<f64>() <= b[r] + 1e-9);
                if ok {
                    best = best.min((0..n).map(|j| c[j] * x[j]).sum());
                }
            }
            let mut k = n;
            while k > 0 && pick[k - 1] == m - n + k - 1 {
                k -= 1;
            }
            if k == 0 {
                return best;
            }
            pick[k - 1] += 1;
            for t in k..n {
                pick[t] = pick[t - 1] + 1;
            }
        }
    }

    #[test]
    fn bounds_match_vertex_enumeration() {
        let mut s = spec(32, 2);
        s.env.u_lo.values_mut()[1] = 0.1;
        let set = build_reduced_feasible_set(&s).unwrap();
        let (a, l, u) = (&set.qp.a, &set.qp.l, &set.qp.u);
        let n = set.qp.n();
        let mut rows = vec![vec![0.0; n]; set.qp.m()];
        for k in 0..a.nnz() {
            rows[a.rows[k]][a.cols[k]] += a.vals[k];
        }
        let (mut ha, mut hb) = (Vec::new(), Vec::new());
        for (i, r) in rows.iter().enumerate() {
            if convex::is_finite_bound(u[i]) {
                ha.push(r.clone());
                hb.push(u[i]);
            }
            if convex::is_finite_bound(l[i]) {
                ha.push(r.iter().map(|v| -v).collect());
                hb.push(-l[i]);
            }
        }
        for cell in 0..2 {
            for (side, sign) in [(Side::Lo, 1.0), (Side::Hi, -1.0)] {
                let c = set.cell_average_objective(cell, sign);
                let oracle = sign * vertex_minimum(&ha, &hb, &c) + set.g[cell];
                let lp = bound_lps(&s, &[(cell, side)], SolverSettings::default()).unwrap()[0];
                assert!((oracle - lp).abs() < 1e-8, "{cell} {side:?}: {oracle} vs {lp}");
            }
        }
    }

    #[test]
    fn fixed_point_is_idempotent() {
        let s = spec(64, 4);
        let st = ObbtSettings::default();
        let (env, trace) = tighten(&s, &st).unwrap();
        assert!(trace.sweeps.len() > 1);
        let (again, trace2) = tighten(&s.with_envelope(env.clone()), &st).unwrap();
        assert_eq!(trace2.sweeps.len(), 1);
        assert!(trace2.sweeps[0].max_movement <= st.sweep_tol);
        assert!(again.max_state_movement(&env) <= st.sweep_tol);
    }

    #[test]
    fn trace_is_monotone_and_bounds_stay_ordered() {
        for mode in [SweepMode::Sequential, SweepMode::Parallel] {
            let s = spec(64, 8);
            let st = ObbtSettings { mode, ..Default::default() };
            let out = lower_bound_after_obbt(&s, &st).unwrap();
            assert!(out.trace.max_objective_decrease() <= 1e-9);
            assert!(out.m >= out.m_before - 1e-9);
            for (lo, hi) in out.env.u_lo.values().iter().zip(out.env.u_hi.values()) {
                assert!(lo <= hi);
            }
            for upd in &out.trace.updates {
                match upd.side {
                    Side::Lo => assert!(upd.new >= upd.old - 1e-9),
                    Side::Hi => assert!(upd.new <= upd.old + 1e-9),
                }
            }
        }
    }

    #[test]
    fn tightened_envelope_keeps_embedded_points() {
        let s = spec(64, 8);
        let (env, _) = tighten(&s, &ObbtSettings::default()).unwrap();
        let t = s.with_envelope(env);
        for seed in 0..6u64 {
            let w = CellFunction::from_fn(t.control_grid(), |i| {
                (((i as u64 + 3) * (seed * 2 + 5) * 7919) % 17) as f64 / 2.0 - 4.0
            });
            assert!(embed_check(&t, &w).unwrap() <= 1e-10, "seed {seed}");
        }
        for c in [-4.0, 4.0] {
            let w = CellFunction::constant(t.control_grid(), c);
            assert!(embed_check(&t, &w).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn sequential_and_parallel_reach_the_same_fixed_point() {
        let s = spec(64, 4);
        let a = tighten(&s, &ObbtSettings::default()).unwrap().0;
        let b = tighten(&s, &ObbtSettings { mode: SweepMode::Parallel, ..Default::default() }).unwrap().0;
        assert!(a.max_state_movement(&b) < 1e-5);
    }

    #[test]
    fn excluding_every_state_is_an_error() {
        let mut s = spec(64, 4);
        s.env = Envelope::uniform(s.env.coarse, 3.0, 4.0, -4.0, 4.0).unwrap();
        assert!(matches!(tighten(&s, &ObbtSettings::default()), Err(Error::InfeasibleEnvelope(_))));
    }

    #[test]
    fn settings_are_validated() {
        let bad = ObbtSettings { sweep_tol: 1e-8, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ObbtSettings { safeguard: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ObbtSettings { max_sweeps: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn trace_csv_has_one_line_per_update() {
        let (_, trace) = tighten(&spec(32, 2), &ObbtSettings::default()).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), trace.updates.len() + 1);
        assert!(text.starts_with("sweep,cell,side,old,new,objective"));
    }
}
