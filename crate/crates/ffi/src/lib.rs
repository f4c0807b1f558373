//! C interface to `mccpde-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new` and
//! released by `*_free`. Every fallible call returns an `MccpdeStatus`; the
//! message of the most recent failure on the calling thread is available from
//! `mccpde_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mccpde_core::certificates::{self, embedding_bounds, Coercivity, StateBounds};
use mccpde_core::fem1d::{solve_state, PdeProblem};
use mccpde_core::functions::Function1d;
use mccpde_core::grid::{CellFunction, NodalFunction, Partition};
use mccpde_core::obbt::{self, ObbtSettings};
use mccpde_core::relaxation::{lower_bound_solve, Envelope, RelaxationKind, RelaxationSpec, Target};
use mccpde_core::upper_bounds::{self, ContinuousSettings};
use mccpde_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MccpdeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Solver = 3,
    InfeasibleEnvelope = 4,
    Singular = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MccpdeRelaxation {
    /// Cellwise relaxation on the FEM grid.
    Pointwise = 0,
    /// Fine control, averaged McCormick rows on the coarse grid.
    Averaged = 1,
    /// Control on the coarse grid.
    FullyAveraged = 2,
}

/// Problem data: `-u'' + u w = f` on `(0, 1)` with constant `f`, the control
/// box and the tracking target.
pub struct MccpdeProblem {
    prob: PdeProblem,
    alpha: f64,
    target: Target,
}

/// State bounds per coarse cell, as produced by bound tightening.
pub struct MccpdeEnvelope {
    env: Envelope,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MccpdeStatus {
    match err {
        Error::Solver(_) => MccpdeStatus::Solver,
        Error::InfeasibleEnvelope(_) => MccpdeStatus::InfeasibleEnvelope,
        Error::SingularSystem(_) => MccpdeStatus::Singular,
        _ => MccpdeStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Error>) -> MccpdeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MccpdeStatus::Ok,
        Ok(Err(e)) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            MccpdeStatus::Panic
        }
    }
}

fn null(what: &str) -> Error {
    Error::InvalidProblem(format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Error> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Error> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn problem<'a>(p: *const MccpdeProblem) -> Result<&'a MccpdeProblem, Error> {
    p.as_ref().ok_or_else(|| null("problem"))
}

fn expect_len(got: usize, want: usize, what: &str) -> Result<(), Error> {
    if got != want {
        return Err(Error::DimensionMismatch(format!("{what}: length {got}, expected {want}")));
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mccpde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a problem with `fem_n` FEM cells, source `f`, control box
/// `[w_lo, w_hi]`, TV weight `alpha` and target `u_d ≡ 0`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mccpde_problem_new(
    fem_n: usize,
    f: f64,
    w_lo: f64,
    w_hi: f64,
    alpha: f64,
    out: *mut *mut MccpdeProblem,
) -> MccpdeStatus {
    if out.is_null() {
        set_error("out is null".into());
        return MccpdeStatus::NullPointer;
    }
    *out = ptr::null_mut();
    guard(|| {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidProblem(format!("alpha = {alpha} must be nonnegative")));
        }
        let fem = Partition::new(fem_n)?;
        let prob = PdeProblem::new(Function1d::constant(f), w_lo, w_hi, fem, fem)?;
        let target = Target::Function(Function1d::constant(0.0));
        *out = Box::into_raw(Box::new(MccpdeProblem { prob, alpha, target }));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from `mccpde_problem_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mccpde_problem_free(p: *mut MccpdeProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Replaces the target by the piecewise linear function with the given
/// `fem_n + 1` nodal values.
///
/// # Safety
/// `p` must be a live problem handle and `values` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mccpde_problem_set_target_nodal(
    p: *mut MccpdeProblem,
    values: *const f64,
    len: usize,
) -> MccpdeStatus {
    guard(|| {
        let pr = p.as_mut().ok_or_else(|| null("problem"))?;
        let v = slice(values, len, "values")?;
        pr.target = Target::Nodal(NodalFunction::new(pr.prob.fem_grid, v.to_vec())?);
        Ok(())
    })
}

/// Nodal state of the piecewise constant control `w` with `n_w` equal cells;
/// writes `fem_n + 1` values to `u`.
///
/// # Safety
/// `p` must be a live problem handle, `w` must point to `n_w` doubles and `u`
/// to `n_u` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mccpde_solve_state(
    p: *const MccpdeProblem,
    w: *const f64,
    n_w: usize,
    u: *mut f64,
    n_u: usize,
) -> MccpdeStatus {
    guard(|| {
        let pr = problem(p)?;
        let w = CellFunction::new(Partition::new(n_w)?, slice(w, n_w, "w")?.to_vec())?;
        let out = slice_mut(u, n_u, "u")?;
        expect_len(n_u, pr.prob.fem_grid.n_nodes(), "u")?;
        let prob = pr.prob.with_control_grid(w.partition())?;
        out.copy_from_slice(solve_state(&prob, &w)?.values());
        Ok(())
    })
}

fn initial_envelope(pr: &MccpdeProblem, coarse: Partition) -> Result<Envelope, Error> {
    let b = embedding_bounds(pr.prob.w_lo, pr.prob.w_hi, pr.prob.f_l2_norm(), Coercivity::Averaged)?.linf;
    Envelope::uniform(coarse, -b, b, pr.prob.w_lo, pr.prob.w_hi)
}

fn relaxation_spec(pr: &MccpdeProblem, kind: MccpdeRelaxation, env: Envelope) -> RelaxationSpec {
    let kind = match kind {
        MccpdeRelaxation::Pointwise => RelaxationKind::PointwiseMcC,
        MccpdeRelaxation::Averaged => RelaxationKind::AveragedMcCh,
        MccpdeRelaxation::FullyAveraged => RelaxationKind::FullyAveragedMcChh,
    };
    RelaxationSpec { kind, prob: pr.prob.clone(), env, alpha: pr.alpha, u_d: pr.target.clone() }
}

/// Optimal value of a relaxation on `n_h` coarse cells under the a-priori
/// state bounds, or under `env` when it is not null. The pointwise
/// relaxation requires `n_h == fem_n`. `kind` is an `MccpdeRelaxation`.
///
/// # Safety
/// `p` must be a live problem handle, `env` null or a live envelope handle and
/// `m` a writable double.
#[no_mangle]
pub unsafe extern "C" fn mccpde_lower_bound(
    p: *const MccpdeProblem,
    kind: i32,
    n_h: usize,
    env: *const MccpdeEnvelope,
    m: *mut f64,
) -> MccpdeStatus {
    guard(|| {
        let pr = problem(p)?;
        let kind = match kind {
            0 => MccpdeRelaxation::Pointwise,
            1 => MccpdeRelaxation::Averaged,
            2 => MccpdeRelaxation::FullyAveraged,
            k => return Err(Error::InvalidProblem(format!("unknown relaxation kind {k}"))),
        };
        let m = m.as_mut().ok_or_else(|| null("m"))?;
        let env = match env.as_ref() {
            Some(e) => e.env.clone(),
            None => initial_envelope(pr, Partition::new(n_h)?)?,
        };
        *m = lower_bound_solve(&relaxation_spec(pr, kind, env))?.m;
        Ok(())
    })
}

/// Bound tightening for the fully averaged relaxation on `n_h` cells.
/// Stores the tightened envelope in `out` and the relaxation value on it in
/// `m`.
///
/// # Safety
/// `p` must be a live problem handle; `out` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mccpde_obbt(
    p: *const MccpdeProblem,
    n_h: usize,
    out: *mut *mut MccpdeEnvelope,
    m: *mut f64,
) -> MccpdeStatus {
    if out.is_null() {
        set_error("out is null".into());
        return MccpdeStatus::NullPointer;
    }
    *out = ptr::null_mut();
    guard(|| {
        let pr = problem(p)?;
        let m = m.as_mut().ok_or_else(|| null("m"))?;
        let spec = relaxation_spec(pr, MccpdeRelaxation::FullyAveraged, initial_envelope(pr, Partition::new(n_h)?)?);
        let o = obbt::lower_bound_after_obbt(&spec, &ObbtSettings::default())?;
        *m = o.m;
        *out = Box::into_raw(Box::new(MccpdeEnvelope { env: o.env }));
        Ok(())
    })
}

/// Number of cells of an envelope; zero for a null handle.
///
/// # Safety
/// `e` must be null or a live envelope handle.
#[no_mangle]
pub unsafe extern "C" fn mccpde_envelope_cells(e: *const MccpdeEnvelope) -> usize {
    e.as_ref().map_or(0, |e| e.env.coarse.n_cells())
}

/// Copies the per-cell state bounds into `lo` and `hi`, each of length `n`.
///
/// # Safety
/// `e` must be a live envelope handle and `lo`, `hi` must point to `n`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mccpde_envelope_state_bounds(
    e: *const MccpdeEnvelope,
    lo: *mut f64,
    hi: *mut f64,
    n: usize,
) -> MccpdeStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("envelope"))?;
        expect_len(n, e.env.coarse.n_cells(), "bounds")?;
        slice_mut(lo, n, "lo")?.copy_from_slice(e.env.u_lo.values());
        slice_mut(hi, n, "hi")?.copy_from_slice(e.env.u_hi.values());
        Ok(())
    })
}

/// # Safety
/// `e` must be null or an envelope handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mccpde_envelope_free(e: *mut MccpdeEnvelope) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Quadratic error constant for the feasible control `w_hat` and the lower
/// bound `j0` on the tracking term. With `tight` nonzero the state bounds are
/// the solutions for the constant controls `w_hi` and `w_lo` (valid for
/// `f ≥ 0`), otherwise the a-priori box.
///
/// # Safety
/// `p` must be a live problem handle, `w_hat` must point to `n_w` doubles and
/// `c_quad` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mccpde_c_quad(
    p: *const MccpdeProblem,
    w_hat: *const f64,
    n_w: usize,
    j0: f64,
    tight: i32,
    c_quad: *mut f64,
) -> MccpdeStatus {
    guard(|| {
        let pr = problem(p)?;
        let out = c_quad.as_mut().ok_or_else(|| null("c_quad"))?;
        let w = CellFunction::new(Partition::new(n_w)?, slice(w_hat, n_w, "w_hat")?.to_vec())?;
        let fem = pr.prob.fem_grid;
        let bounds = if tight != 0 {
            let lo = solve_state(&pr.prob, &CellFunction::constant(fem, pr.prob.w_hi))?;
            let hi = solve_state(&pr.prob, &CellFunction::constant(fem, pr.prob.w_lo))?;
            StateBounds::Nodal { lo, hi }
        } else {
            StateBounds::Cells(initial_envelope(pr, fem)?)
        };
        *out = certificates::c_quad(&pr.prob, &w, pr.alpha, j0, &bounds, &pr.target)?.c_quad;
        Ok(())
    })
}

/// `m − c_quad·h²`.
#[no_mangle]
pub extern "C" fn mccpde_validated_lower_bound(m: f64, c_quad: f64, h: f64) -> f64 {
    certificates::validated_lower_bound(m, c_quad, h).value
}

/// Feasible control on `n_w` cells and its objective. With `integer` nonzero
/// the control is integral.
///
/// # Safety
/// `p` must be a live problem handle, `w` must point to `n_w` writable doubles
/// and `obj` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mccpde_upper_bound(
    p: *const MccpdeProblem,
    n_w: usize,
    integer: i32,
    w: *mut f64,
    obj: *mut f64,
) -> MccpdeStatus {
    guard(|| {
        let pr = problem(p)?;
        let obj = obj.as_mut().ok_or_else(|| null("obj"))?;
        let out = slice_mut(w, n_w, "w")?;
        let grid = Partition::new(n_w)?;
        let st = ContinuousSettings::default();
        let r = if integer != 0 {
            upper_bounds::solve_integer(&pr.prob, &pr.target, pr.alpha, grid, &st)?
        } else {
            upper_bounds::solve_continuous(&pr.prob, &pr.target, pr.alpha, grid, &st)?
        };
        out.copy_from_slice(r.w.values());
        *obj = r.obj_nonsmooth;
        Ok(())
    })
}
