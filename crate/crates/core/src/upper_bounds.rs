//! Feasible controls and the upper bounds they certify.
//!
//! The continuous problem is treated by projected gradient descent on the
//! Huber-smoothed reduced objective. The integer variant starts from the
//! rounded continuous solution and runs a deterministic local search.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem1d::{Coupling, PdeProblem, ReducedObjective, DEFAULT_HUBER_EPS};
use crate::grid::{tv, CellFunction, NodalFunction, Partition};
use crate::relaxation::Target;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousSettings {
    pub eps_huber: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    /// Starting value of every cell; the midpoint of the control bounds when unset.
    pub start: Option<f64>,
    pub armijo: f64,
}

impl Default for ContinuousSettings {
    fn default() -> Self {
        Self { eps_huber: DEFAULT_HUBER_EPS, step_tol: 1e-8, max_iter: 5000, start: None, armijo: 1e-4 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PrimalResult {
    #[serde(skip)]
    pub w: CellFunction,
    #[serde(skip)]
    pub u: NodalFunction,
    /// Objective with the exact total variation; this is the upper bound.
    pub obj_nonsmooth: f64,
    pub obj_smoothed: f64,
    pub iters: usize,
    /// Objective of every accepted iterate (smoothed for the continuous
    /// solver, exact for the integer search).
    pub history: Vec<f64>,
    pub heuristic: bool,
}

fn project(v: &mut [f64], lo: f64, hi: f64) {
    for x in v {
        *x = x.clamp(lo, hi);
    }
}

fn l2_dist(a: &[f64], b: &[f64], h: f64) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * h).sqrt()
}

/// Projected gradient with Armijo backtracking along the projection arc.
///
/// Trial steps come from the Barzilai-Borwein formula; the accepted sequence
/// of smoothed objectives is nonincreasing.
pub fn solve_continuous(
    prob: &PdeProblem,
    u_d: &Target,
    alpha: f64,
    grid: Partition,
    settings: &ContinuousSettings,
) -> Result<PrimalResult> {
    let prob = prob.with_control_grid(grid)?;
    let ops = prob.operators()?;
    let obj = ReducedObjective::new(&prob, u_d.tracking(&ops)?, Coupling::Exact, alpha, settings.eps_huber)?;
    let (lo, hi) = (prob.w_lo, prob.w_hi);
    let h = grid.h();
    let start = settings.start.unwrap_or(0.5 * (lo + hi)).clamp(lo, hi);
    let mut w = CellFunction::constant(grid, start);
    let mut ev = obj.evaluate(&w, true)?;
    let mut history = vec![ev.smoothed];
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iters = 0;
    while iters < settings.max_iter {
        iters += 1;
        // L² gradient of the cell-value parametrization
        let g: Vec<f64> = ev.gradient.as_ref().expect("gradient requested").iter().map(|v| v / h).collect();
        if let Some((pw, pg)) = &prev {
            let s: Vec<f64> = w.values().iter().zip(pw).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(pg).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|a| a * a).sum();
            if sy > 0.0 {
                step = ss / sy;
            }
        }
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = w.values().iter().zip(&g).map(|(a, b)| a - step * b).collect();
            project(&mut trial, lo, hi);
            let decrease: f64 = g.iter().zip(trial.iter().zip(w.values())).map(|(gi, (t, c))| gi * (t - c) * h).sum();
            let cand = CellFunction::new(grid, trial)?;
            let ev_c = obj.evaluate(&cand, true)?;
            if ev_c.smoothed <= ev.smoothed + settings.armijo * decrease {
                accepted = Some((cand, ev_c));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, ev_c)) = accepted else { break };
        let moved = l2_dist(cand.values(), w.values(), h);
        prev = Some((w.values().to_vec(), g));
        w = cand;
        ev = ev_c;
        history.push(ev.smoothed);
        if moved < settings.step_tol {
            break;
        }
    }
    let u = ops.to_nodal(&ev.u)?;
    Ok(PrimalResult { w, u, obj_nonsmooth: ev.nonsmooth, obj_smoothed: ev.smoothed, iters, history, heuristic: false })
}

/// Integer local search started from the rounded continuous solution.
///
/// Moves are tried cell by cell in ascending order: first every other
/// admissible value of one cell, then the exchange of the values of a cell and
/// its right neighbour. Any strict decrease of the exact objective is
/// accepted; the search stops when a full round finds none.
pub fn solve_integer(
    prob: &PdeProblem,
    u_d: &Target,
    alpha: f64,
    grid: Partition,
    settings: &ContinuousSettings,
) -> Result<PrimalResult> {
    let cont = solve_continuous(prob, u_d, alpha, grid, settings)?;
    integer_search(prob, u_d, alpha, &cont.w)
}

/// Local search from the integer rounding of `start`.
pub fn integer_search(prob: &PdeProblem, u_d: &Target, alpha: f64, start: &CellFunction) -> Result<PrimalResult> {
    let grid = start.partition();
    let prob = prob.with_control_grid(grid)?;
    let ops = prob.operators()?;
    let obj = ReducedObjective::new(&prob, u_d.tracking(&ops)?, Coupling::Exact, alpha, DEFAULT_HUBER_EPS)?;
    let (lo, hi) = (prob.w_lo.ceil(), prob.w_hi.floor());
    if lo > hi {
        return Err(Error::InvalidProblem(format!("no integer control in [{}, {}]", prob.w_lo, prob.w_hi)));
    }
    let values: Vec<f64> = (lo as i64..=hi as i64).map(|v| v as f64).collect();
    let mut w = CellFunction::from_fn(grid, |i| start.values()[i].round().clamp(lo, hi));
    let eval = |w: &CellFunction| obj.evaluate(w, false).map(|e| e.nonsmooth);
    let mut best = eval(&w)?;
    let mut history = vec![best];
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut improved = false;
        for i in 0..grid.n_cells() {
            for &v in &values {
                if v == w.values()[i] {
                    continue;
                }
                let mut cand = w.clone();
                cand.values_mut()[i] = v;
                let val = eval(&cand)?;
                if val < best {
                    w = cand;
                    best = val;
                    history.push(best);
                    improved = true;
                }
            }
            if i + 1 < grid.n_cells() && w.values()[i] != w.values()[i + 1] {
                let mut cand = w.clone();
                cand.values_mut().swap(i, i + 1);
                let val = eval(&cand)?;
                if val < best {
                    w = cand;
                    best = val;
                    history.push(best);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    let ev = obj.evaluate(&w, false)?;
    let u = ops.to_nodal(&ev.u)?;
    Ok(PrimalResult {
        w,
        u,
        obj_nonsmooth: ev.nonsmooth,
        obj_smoothed: ev.smoothed,
        iters: rounds,
        history,
        heuristic: true,
    })
}

/// True objective `½‖S(w) − u_d‖² + α·TV(w)` with the exact coupling.
pub fn objective(prob: &PdeProblem, u_d: &Target, alpha: f64, w: &CellFunction) -> Result<f64> {
    let prob = prob.with_control_grid(w.partition())?;
    let ops = prob.operators()?;
    let u = crate::fem1d::solve_state(&prob, w)?;
    Ok(u_d.tracking(&ops)?.value(&ops, u.interior()) + alpha * tv(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem1d::solve_state;
    use crate::functions::Function1d;

    fn problem(n: usize, f: f64) -> PdeProblem {
        let g = Partition::new(n).unwrap();
        PdeProblem::new(Function1d::constant(f), -4.0, 4.0, g, g).unwrap()
    }

    #[test]
    fn recovers_a_reachable_target() {
        let prob = problem(128, 6.0);
        let grid = Partition::new(8).unwrap();
        let w0 = CellFunction::from_fn(grid, |i| if i < 4 { 1.5 } else { -2.0 });
        let u0 = solve_state(&prob.with_control_grid(grid).unwrap(), &w0).unwrap();
        let r = solve_continuous(&prob, &Target::Nodal(u0), 0.0, grid, &ContinuousSettings::default()).unwrap();
        assert!(r.obj_nonsmooth <= 1e-8, "{}", r.obj_nonsmooth);
    }

    #[test]
    fn heavy_regularization_flattens_the_control() {
        let prob = problem(128, 6.0);
        let grid = Partition::new(16).unwrap();
        let u_d = Target::Function(Function1d::reference_target());
        let st = ContinuousSettings { start: Some(-1.0), ..Default::default() };
        let r = solve_continuous(&prob, &u_d, 10.0, grid, &st).unwrap();
        assert!(tv(&r.w) < 1e-3, "tv {}", tv(&r.w));
    }

    #[test]
    fn continuous_history_is_monotone_and_feasible() {
        let prob = problem(256, 6.0);
        let grid = Partition::new(32).unwrap();
        let u_d = Target::Function(Function1d::reference_target());
        let r = solve_continuous(&prob, &u_d, 2.5e-4, grid, &ContinuousSettings::default()).unwrap();
        assert!(r.history.windows(2).all(|p| p[1] <= p[0]));
        assert!(r.w.values().iter().all(|v| (-4.0..=4.0).contains(v)));
        assert!(r.obj_nonsmooth >= r.obj_smoothed - 2.5e-4 * 1e-3 * 32.0);
        assert!(r.obj_nonsmooth <= r.obj_smoothed + 1e-15);
        let direct = objective(&prob, &u_d, 2.5e-4, &r.w).unwrap();
        assert!((direct - r.obj_nonsmooth).abs() < 1e-12);
    }

    #[test]
    fn integer_search_is_integral_and_strictly_decreasing() {
        let prob = problem(128, 6.0);
        let grid = Partition::new(8).unwrap();
        let u_d = Target::Function(Function1d::reference_target());
        let r = solve_integer(&prob, &u_d, 2.5e-4, grid, &ContinuousSettings::default()).unwrap();
        assert!(r.w.values().iter().all(|v| v.fract() == 0.0 && (-4.0..=4.0).contains(v)));
        assert!(r.history.windows(2).all(|p| p[1] < p[0]));
        assert!(r.heuristic);
    }

    #[test]
    fn zero_data_reaches_a_constant_control() {
        let prob = problem(64, 0.0);
        let start = CellFunction::from_fn(Partition::new(4).unwrap(), |i| [3.2, -1.0, 2.6, 0.4][i]);
        let zero = Target::Function(Function1d::constant(0.0));
        let r = integer_search(&prob, &zero, 2.5e-4, &start).unwrap();
        assert_eq!(r.obj_nonsmooth, 0.0);
        assert_eq!(tv(&r.w), 0.0);
    }
}
