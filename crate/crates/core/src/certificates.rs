//! A-priori constants of the discretization error analysis and the validated
//! lower bounds assembled from them.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem1d::{Coupling, PdeProblem, ReducedObjective};
use crate::grid::{project_avg, tv, CellFunction, NodalFunction, Partition};
use crate::relaxation::{Envelope, Target};

/// Five-point Gauss-Legendre rule on `[-1, 1]`.
const GAUSS5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// `c₁(w_ℓ) = 1 + w_ℓ/π²`.
pub fn c1(w_lo: f64) -> Result<f64> {
    let c = 1.0 + w_lo / (PI * PI);
    if !(c > 0.0) {
        return Err(Error::CoercivityLost(format!("c1 = {c:e} for w_lo = {w_lo}")));
    }
    Ok(c)
}

/// `c₂(w_ℓ, w_u) = 1 − max(|w_ℓ|, |w_u|)/π²`.
pub fn c2(w_lo: f64, w_hi: f64) -> Result<f64> {
    let c = 1.0 - w_lo.abs().max(w_hi.abs()) / (PI * PI);
    if !(c > 0.0) {
        return Err(Error::CoercivityLost(format!("c2 = {c:e} for w in [{w_lo}, {w_hi}]")));
    }
    Ok(c)
}

/// Which coercivity constant an a-priori state bound uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Coercivity {
    /// Exact coupling, `c₁`.
    Exact,
    /// Averaged coupling, `c₂`.
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmbeddingBounds {
    /// Bound on `‖∇u‖_{L²}`.
    pub h10: f64,
    /// Bound on `‖u‖_{L∞}`.
    pub linf: f64,
}

pub fn embedding_bounds(w_lo: f64, w_hi: f64, f_norm: f64, variant: Coercivity) -> Result<EmbeddingBounds> {
    let c = match variant {
        Coercivity::Exact => c1(w_lo)?,
        Coercivity::Averaged => c2(w_lo, w_hi)?,
    };
    Ok(EmbeddingBounds { h10: f_norm / c, linf: f_norm / (2.0 * c) })
}

/// Constants that depend on the control bounds and `‖f‖` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaseConstants {
    pub w_lo: f64,
    pub w_hi: f64,
    pub f_norm: f64,
    pub c1: f64,
    pub c2: f64,
    /// Lipschitz constant of the control-to-state map, `L¹ → H¹₀`.
    pub l_s: f64,
    /// Lipschitz constant of its derivative.
    pub l_s_prime: f64,
    /// Bound on the second derivative, `‖S''(w)[ψ,φ]‖ ≤ κ‖ψ‖_{L¹}‖φ‖_{L¹}`.
    pub kappa: f64,
    pub c32b: f64,
}

impl BaseConstants {
    pub fn new(w_lo: f64, w_hi: f64, f_norm: f64) -> Result<Self> {
        let (a, b) = (c1(w_lo)?, c2(w_lo, w_hi)?);
        let wmax = w_lo.abs().max(w_hi.abs());
        let l_s = f_norm / (4.0 * b * b);
        let l_s_prime = (w_hi - w_lo).abs() / (2.0 * b) * (l_s + f_norm / (PI * b * b));
        let kappa = f_norm / (2.0 * PI * b.powi(3));
        let c32b = PI * PI * wmax * f_norm / (a * b);
        Ok(Self { w_lo, w_hi, f_norm, c1: a, c2: b, l_s, l_s_prime, kappa, c32b })
    }

    pub fn for_problem(prob: &PdeProblem) -> Result<Self> {
        Self::new(prob.w_lo, prob.w_hi, prob.f_l2_norm())
    }

    fn wmax(&self) -> f64 {
        self.w_lo.abs().max(self.w_hi.abs())
    }

    /// `C_{3/2}^a` for a control with the given total variation.
    pub fn c32a(&self, tv_w: f64) -> f64 {
        PI * (self.w_hi - self.w_lo).abs().sqrt() / (self.c1 * self.c2) * tv_w.sqrt() * self.f_norm
    }

    /// `C₂` for a control with total variation `tv_w` and the given
    /// `‖f − (P_h u_h)(P_h w)‖_{L¹}`.
    pub fn c2_const(&self, tv_w: f64, residual_l1: f64) -> f64 {
        let wmax = self.wmax();
        (4.0 * PI * PI * wmax * self.f_norm + tv_w * residual_l1 + (self.c1 + wmax / PI) * tv_w * self.f_norm)
            / (4.0 * self.c1 * self.c2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorConstants {
    pub c32a: f64,
    pub c32b: f64,
    pub c2: f64,
    pub tv_w: f64,
    pub residual_l1: f64,
}

/// Sum of a five-point Gauss rule over every cell of `p`, each cell split at
/// the given breakpoints.
fn integrate(p: Partition, breaks: &[f64], g: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    for i in 0..p.n_cells() {
        let (a, b) = p.cell(i);
        let mut pts = vec![a];
        pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
        pts.push(b);
        for w in pts.windows(2) {
            let (m, r) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            total += r * GAUSS5.iter().map(|(t, gw)| gw * g(m + r * t)).sum::<f64>();
        }
    }
    total
}

/// Constants of the averaged-state error estimate for a control `w` and the
/// discrete state `u_h`, with `P_h` the averaging onto `coarse`.
pub fn error_constants(
    prob: &PdeProblem,
    w: &CellFunction,
    u_h: &NodalFunction,
    coarse: Partition,
) -> Result<ErrorConstants> {
    let base = BaseConstants::for_problem(prob)?;
    let pw = project_avg(w, coarse)?;
    let pu = project_avg(u_h, coarse)?;
    let prod = CellFunction::from_fn(coarse, |i| pw.values()[i] * pu.values()[i]);
    let residual_l1 = integrate(prob.fem_grid, &prob.f.breakpoints(), |x| (prob.f.eval(x) - prod.eval(x)).abs());
    let tv_w = tv(w);
    Ok(ErrorConstants {
        c32a: base.c32a(tv_w),
        c32b: base.c32b,
        c2: base.c2_const(tv_w, residual_l1),
        tv_w,
        residual_l1,
    })
}

/// Pointwise state bounds used by `c_quad`.
#[derive(Debug, Clone)]
pub enum StateBounds {
    /// Constant on the cells of an envelope.
    Cells(Envelope),
    /// Continuous piecewise linear bounds.
    Nodal { lo: NodalFunction, hi: NodalFunction },
}

impl StateBounds {
    fn eval(&self, x: f64) -> (f64, f64) {
        match self {
            StateBounds::Cells(env) => (env.u_lo.eval(x), env.u_hi.eval(x)),
            StateBounds::Nodal { lo, hi } => (lo.eval(x), hi.eval(x)),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            StateBounds::Cells(env) => env.coarse.cell_edges(),
            StateBounds::Nodal { lo, .. } => lo.partition().cell_edges(),
        }
    }
}

/// Every constant entering the quadratic lower-bound correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constants {
    #[serde(flatten)]
    pub base: BaseConstants,
    pub alpha: f64,
    pub j0: f64,
    /// `j(û) + α·TV(ŵ)` of the feasible control.
    pub j_hat: f64,
    /// Substitute for `TV(w̄)`, `(j(û) + α·TV(ŵ) − j₀)/α`.
    pub tv_bound: f64,
    /// `‖d̃_u‖_{L²}`, the Lipschitz bound `L_u` of the tracking term.
    pub l_u: f64,
    /// `L_w`; the tracking term does not depend on the control.
    pub l_w: f64,
    /// `‖d̃_f‖_{L¹}`.
    pub d_f_l1: f64,
    pub c32a: f64,
    pub c2: f64,
    pub c_quad: f64,
}

impl Constants {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("constants serialize")
    }
}

/// Assembles `c_quad` from a feasible control `w_hat`, a lower bound `j0` on the
/// optimal tracking term and state bounds.
pub fn c_quad(
    prob: &PdeProblem,
    w_hat: &CellFunction,
    alpha: f64,
    j0: f64,
    bounds: &StateBounds,
    u_d: &Target,
) -> Result<Constants> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidProblem("c_quad needs alpha > 0".into()));
    }
    if !(j0 >= 0.0) {
        return Err(Error::InvalidProblem(format!("j0 = {j0} must be nonnegative")));
    }
    let ops = prob.operators()?;
    let control = prob.with_control_grid(w_hat.partition())?;
    let obj = ReducedObjective::new(&control, u_d.tracking(&ops)?, Coupling::Exact, alpha, 0.0)?;
    let j_hat = obj.evaluate(w_hat, false)?.nonsmooth;
    c_quad_from_objective(prob, j_hat, alpha, j0, bounds, u_d)
}

/// `c_quad` with the objective `j(û) + α·TV(ŵ)` of some feasible control given
/// directly.
pub fn c_quad_from_objective(
    prob: &PdeProblem,
    j_hat: f64,
    alpha: f64,
    j0: f64,
    bounds: &StateBounds,
    u_d: &Target,
) -> Result<Constants> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidProblem("c_quad needs alpha > 0".into()));
    }
    if !(j0 >= 0.0) {
        return Err(Error::InvalidProblem(format!("j0 = {j0} must be nonnegative")));
    }
    let base = BaseConstants::for_problem(prob)?;
    let tv_bound = (j_hat - j0) / alpha;
    if tv_bound < 0.0 {
        return Err(Error::InvalidProblem(format!(
            "j0 = {j0:e} exceeds the objective {j_hat:e} of the feasible control"
        )));
    }

    let mut breaks = bounds.breakpoints();
    breaks.extend(u_d.breakpoints());
    breaks.extend(prob.f.breakpoints());
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let (wl, wu) = (prob.w_lo, prob.w_hi);
    let l_u = integrate(prob.fem_grid, &breaks, |x| {
        let (lo, hi) = bounds.eval(x);
        let t = u_d.eval(x);
        (hi - t).abs().max((t - lo).abs()).powi(2)
    })
    .sqrt();
    let d_f_l1 = integrate(prob.fem_grid, &breaks, |x| {
        let (lo, hi) = bounds.eval(x);
        let f = prob.f.eval(x);
        [lo * wl, lo * wu, hi * wl, hi * wu].iter().fold(0.0f64, |m, p| m.max((f - p).abs()))
    });
    let c2 = base.c2_const(tv_bound, d_f_l1);
    Ok(Constants {
        base,
        alpha,
        j0,
        j_hat,
        tv_bound,
        l_u,
        l_w: 0.0,
        d_f_l1,
        c32a: base.c32a(tv_bound),
        c2,
        c_quad: l_u * c2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidatedBound {
    pub m_relax: f64,
    pub c_quad: f64,
    pub h: f64,
    pub value: f64,
    /// The bound is positive and so improves on the trivial bound 0.
    pub beats_trivial: bool,
}

pub fn validated_lower_bound(m_relax: f64, c_quad: f64, h: f64) -> ValidatedBound {
    let value = m_relax - c_quad * h * h;
    ValidatedBound { m_relax, c_quad, h, value, beats_trivial: value > 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem1d::solve_state;
    use crate::functions::Function1d;

    const REF_CQ_CONS: f64 = 56026.22410496081;
    const REF_CQ_TIGHT: f64 = 1131.734721750359;

    fn problem(n: usize) -> PdeProblem {
        let g = Partition::new(n).unwrap();
        PdeProblem::new(Function1d::constant(6.0), -4.0, 4.0, g, g).unwrap()
    }

    #[test]
    fn coercivity_constants() {
        let c = 1.0 - 4.0 / (PI * PI);
        assert!((c1(-4.0).unwrap() - c).abs() < 1e-15);
        assert!((c2(-4.0, 4.0).unwrap() - c).abs() < 1e-15);
        assert!((c - 0.594715).abs() < 1e-6);
        assert!(c1(0.0).unwrap() == 1.0);
        assert!(matches!(c1(-10.0), Err(Error::CoercivityLost(_))));
        assert!(matches!(c2(-1.0, 10.0), Err(Error::CoercivityLost(_))));
    }

    #[test]
    fn initial_state_bound() {
        let b = embedding_bounds(-4.0, 4.0, 6.0, Coercivity::Averaged).unwrap();
        assert!((b.linf - 5.0444).abs() < 5e-5);
        let b = embedding_bounds(0.0, 4.0, 6.0, Coercivity::Exact).unwrap();
        assert_eq!(b.h10, 6.0);
    }

    #[test]
    fn closed_forms() {
        let k = BaseConstants::new(-4.0, 4.0, 6.0).unwrap();
        let c = 1.0 - 4.0 / (PI * PI);
        assert!((k.c32b - PI * PI * 4.0 * 6.0 / (c * c)).abs() < 1e-12 * k.c32b);
        assert!((k.l_s - 6.0 / (4.0 * c * c)).abs() < 1e-14);
        assert!((k.kappa - 6.0 / (2.0 * PI * c * c * c)).abs() < 1e-14);
        assert!((k.l_s_prime - 8.0 / (2.0 * c) * (k.l_s + 6.0 / (PI * c * c))).abs() < 1e-12);
        assert_eq!(k.c32a(0.0), 0.0);
    }

    #[test]
    fn quadratic_correction_arithmetic() {
        let b = validated_lower_bound(8.3679e-2, REF_CQ_TIGHT, 2f64.powi(-9));
        assert!((b.value - 7.9362e-2).abs() < 5e-7);
        assert!(b.beats_trivial);
        // both printed values are rounded to five digits
        let b = validated_lower_bound(6.8649e-2, REF_CQ_CONS, 2f64.powi(-10));
        assert!((b.value - 1.5219e-2).abs() < 1e-6);
        assert_eq!(validated_lower_bound(0.3, 1e9, 0.0).value, 0.3);
        assert!(!validated_lower_bound(0.01, REF_CQ_CONS, 0.25).beats_trivial);
    }

    #[test]
    fn degenerate_envelope_gives_zero() {
        let prob = problem(64);
        let w = CellFunction::constant(prob.control_grid, 0.0);
        let u = solve_state(&prob, &w).unwrap();
        let bounds = StateBounds::Nodal { lo: u.clone(), hi: u.clone() };
        let k = c_quad(&prob, &w, 2.5e-4, 0.0, &bounds, &Target::Nodal(u)).unwrap();
        assert!(k.l_u < 1e-12);
        assert!(k.c_quad < 1e-8);
    }

    #[test]
    fn c_quad_is_monotone_in_its_inputs() {
        let prob = problem(256);
        let u_d = Target::Function(Function1d::reference_target());
        let w = CellFunction::from_fn(prob.control_grid, |i| if i < 128 { -4.0 } else { 1.0 });
        let b = 5.0444;
        let wide = StateBounds::Cells(Envelope::uniform(Partition::new(8).unwrap(), -b, b, -4.0, 4.0).unwrap());
        let narrow = StateBounds::Cells(Envelope::uniform(Partition::new(8).unwrap(), -1.0, 2.0, -4.0, 4.0).unwrap());
        let kw = c_quad(&prob, &w, 2.5e-4, 0.0, &wide, &u_d).unwrap();
        let kn = c_quad(&prob, &w, 2.5e-4, 0.0, &narrow, &u_d).unwrap();
        assert!(kn.l_u <= kw.l_u && kn.c_quad <= kw.c_quad);
        let kj = c_quad(&prob, &w, 2.5e-4, 0.5 * kw.j_hat, &wide, &u_d).unwrap();
        assert!(kj.c_quad < kw.c_quad);
        let p2 = PdeProblem::new(Function1d::constant(6.0), -5.0, 5.0, prob.fem_grid, prob.control_grid).unwrap();
        let kx = c_quad(&p2, &w, 2.5e-4, 0.0, &wide, &u_d).unwrap();
        assert!(kx.c_quad >= kw.c_quad);
        assert!(c_quad(&prob, &w, 2.5e-4, 2.0 * kw.j_hat, &wide, &u_d).is_err());
    }

    #[test]
    fn conservative_constant_against_direct_evaluation() {
        // constant bounds ±B: d̃_f = 6 + 4B everywhere and d̃_u² = (B + |u_d|)²
        let prob = problem(2048);
        let u_d = Function1d::reference_target();
        let b = 6.0 / (2.0 * (1.0 - 4.0 / (PI * PI)));
        let w = CellFunction::constant(Partition::new(8).unwrap(), 0.0);
        let env = Envelope::uniform(Partition::new(8).unwrap(), -b, b, -4.0, 4.0).unwrap();
        let k = c_quad(&prob, &w, 2.5e-4, 0.0, &StateBounds::Cells(env), &Target::Function(u_d.clone())).unwrap();
        assert!((k.d_f_l1 - (6.0 + 4.0 * b)).abs() < 1e-12);
        let n = 200_000;
        let du2: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                (b + u_d.eval(x).abs()).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        assert!((k.l_u - du2.sqrt()).abs() < 1e-6);
        assert!((k.tv_bound - k.j_hat / 2.5e-4).abs() < 1e-9);
        assert!((k.c_quad - k.l_u * k.base.c2_const(k.tv_bound, k.d_f_l1)).abs() < 1e-9 * k.c_quad);
    }

    #[test]
    fn measured_error_obeys_c2() {
        let prob = problem(1024);
        for seed in 0..5usize {
            let w =
                CellFunction::from_fn(Partition::new(16).unwrap(), |i| (((i + 1) * (seed + 3) * 37) % 9) as f64 - 4.0);
            let fine = w.prolong(prob.fem_grid).unwrap();
            let p = prob.with_control_grid(w.partition()).unwrap();
            let u = solve_state(&p, &w).unwrap();
            for nh in [16usize, 32, 64, 128] {
                let coarse = Partition::new(nh).unwrap();
                let uh = crate::fem1d::solve_state_avg(&p, &w, coarse).unwrap();
                let k = error_constants(&p, &fine, &uh, coarse).unwrap();
                let err = u.sub(&uh).unwrap().l2_norm();
                assert!(err <= k.c2 * coarse.h().powi(2), "seed {seed} nh {nh}");
                assert!(err <= k.c32a * coarse.h().powf(1.5) + k.c32b * coarse.h().powi(2));
            }
        }
    }
}
