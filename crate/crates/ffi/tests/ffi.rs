use std::ffi::CStr;
use std::ptr;

use mccpde::*;

fn problem(n: usize, f: f64, alpha: f64) -> *mut MccpdeProblem {
    let mut p = ptr::null_mut();
    let st = unsafe { mccpde_problem_new(n, f, -4.0, 4.0, alpha, &mut p) };
    assert_eq!(st, MccpdeStatus::Ok);
    assert!(!p.is_null());
    p
}

fn last_error() -> String {
    let e = mccpde_last_error();
    assert!(!e.is_null());
    unsafe { CStr::from_ptr(e) }.to_string_lossy().into_owned()
}

#[test]
fn state_of_zero_control_is_the_poisson_solution() {
    let p = problem(64, 6.0, 0.0);
    let w = [0.0; 4];
    let mut u = vec![0.0; 65];
    let st = unsafe { mccpde_solve_state(p, w.as_ptr(), 4, u.as_mut_ptr(), u.len()) };
    assert_eq!(st, MccpdeStatus::Ok);
    for (i, v) in u.iter().enumerate() {
        let x = i as f64 / 64.0;
        assert!((v - 3.0 * x * (1.0 - x)).abs() < 1e-12);
    }
    unsafe { mccpde_problem_free(p) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut p = ptr::null_mut();
    let st = unsafe { mccpde_problem_new(0, 6.0, -4.0, 4.0, 0.0, &mut p) };
    assert_eq!(st, MccpdeStatus::InvalidArgument);
    assert!(p.is_null());
    assert!(!last_error().is_empty());

    let st = unsafe { mccpde_problem_new(16, 6.0, -4.0, 4.0, 0.0, ptr::null_mut()) };
    assert_eq!(st, MccpdeStatus::NullPointer);

    let p = problem(16, 6.0, 0.0);
    let mut u = vec![0.0; 3];
    let w = [0.0; 2];
    let st = unsafe { mccpde_solve_state(p, w.as_ptr(), 2, u.as_mut_ptr(), u.len()) };
    assert_eq!(st, MccpdeStatus::InvalidArgument);
    assert!(last_error().contains("length"), "{}", last_error());

    let mut m = 0.0;
    let st = unsafe { mccpde_lower_bound(p, 7, 16, ptr::null(), &mut m) };
    assert_eq!(st, MccpdeStatus::InvalidArgument);
    let st = unsafe { mccpde_lower_bound(ptr::null(), 0, 16, ptr::null(), &mut m) };
    assert_eq!(st, MccpdeStatus::InvalidArgument);
    unsafe { mccpde_problem_free(p) };
    unsafe { mccpde_problem_free(ptr::null_mut()) };
    unsafe { mccpde_envelope_free(ptr::null_mut()) };
    assert_eq!(unsafe { mccpde_envelope_cells(ptr::null()) }, 0);
}

#[test]
fn bound_chain_through_handles() {
    let n = 64;
    let p = problem(n, 6.0, 2.5e-4);
    let target: Vec<f64> = (0..=n).map(|i| (std::f64::consts::PI * i as f64 / n as f64).sin()).collect();
    assert_eq!(unsafe { mccpde_problem_set_target_nodal(p, target.as_ptr(), target.len()) }, MccpdeStatus::Ok);

    let mut pre = 0.0;
    assert_eq!(unsafe { mccpde_lower_bound(p, 2, 8, ptr::null(), &mut pre) }, MccpdeStatus::Ok);
    let mut env = ptr::null_mut();
    let mut post = 0.0;
    assert_eq!(unsafe { mccpde_obbt(p, 8, &mut env, &mut post) }, MccpdeStatus::Ok);
    assert!(post >= pre - 1e-9, "{post} < {pre}");
    assert_eq!(unsafe { mccpde_envelope_cells(env) }, 8);
    let (mut lo, mut hi) = (vec![0.0; 8], vec![0.0; 8]);
    assert_eq!(unsafe { mccpde_envelope_state_bounds(env, lo.as_mut_ptr(), hi.as_mut_ptr(), 8) }, MccpdeStatus::Ok);
    assert!(lo.iter().zip(&hi).all(|(a, b)| a <= b));
    let mut again = 0.0;
    assert_eq!(unsafe { mccpde_lower_bound(p, 2, 8, env, &mut again) }, MccpdeStatus::Ok);
    assert!((again - post).abs() < 1e-7 * (1.0 + post.abs()));

    let mut w = vec![0.0; 8];
    let mut ub = 0.0;
    assert_eq!(unsafe { mccpde_upper_bound(p, 8, 1, w.as_mut_ptr(), &mut ub) }, MccpdeStatus::Ok);
    assert!(w.iter().all(|v| v.fract() == 0.0));
    let mut cq = 0.0;
    assert_eq!(unsafe { mccpde_c_quad(p, w.as_ptr(), 8, 0.0, 1, &mut cq) }, MccpdeStatus::Ok);
    assert!(cq > 0.0);
    let lb = mccpde_validated_lower_bound(post, cq, 1.0 / 8.0);
    assert!(lb <= ub);
    assert_eq!(mccpde_validated_lower_bound(1.0, 16.0, 0.25), 0.0);
    unsafe { mccpde_envelope_free(env) };
    unsafe { mccpde_problem_free(p) };
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/mccpde.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in [
        "mccpde_problem_new",
        "mccpde_obbt",
        "mccpde_last_error",
        "MCCPDE_STATUS_SOLVER",
        "MCCPDE_RELAXATION_POINTWISE",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(
        &src,
        format!("#include \"{header}\"\nint main(void) {{ MccpdeProblem *p = 0; mccpde_problem_free(p); return MCCPDE_STATUS_OK; }}\n"),
    )
    .unwrap();
    let Ok(out) =
        std::process::Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output()
    else {
        eprintln!("no C compiler found; header compile check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("mccpde-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
