use mccpde_core::convex::{solve, Session, SolveStatus, SolverSettings, SparseQP, Triplets};
use mccpde_core::grid::{project_avg, tv, CellFunction, Partition};
use mccpde_core::invariants;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn assert_check(r: invariants::CheckResult) {
    assert!(r.passed, "{}: worst {:e} > {:e}", r.name, r.worst, r.tol);
}

#[test]
fn projection_is_nonexpansive() {
    assert_check(invariants::projection_nonexpansive(11, 200).unwrap());
}

#[test]
fn projection_does_not_increase_tv() {
    assert_check(invariants::tv_nonexpansive(12, 200).unwrap());
}

#[test]
fn averaging_error_is_orthogonal_to_cellwise_products() {
    assert_check(invariants::orthogonality(13, 200).unwrap());
}

#[test]
fn embedded_points_are_feasible() {
    assert_check(invariants::embedded_feasibility(14, 10).unwrap());
}

#[test]
fn obbt_is_monotone() {
    assert_check(invariants::obbt_monotone(15, 3).unwrap());
}

#[test]
fn obbt_bounds_never_cross() {
    assert_check(invariants::bounds_never_cross(16, 4).unwrap());
}

#[test]
fn adjoint_gradient_matches_finite_differences() {
    assert_check(invariants::adjoint_gradient(17, 5).unwrap());
}

fn random_qp(seed: &[f64]) -> (SparseQP, DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let n = 6;
    let m = 2;
    let mut it = seed.iter().copied().cycle();
    let b = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
    let p = &b * b.transpose() + DMatrix::identity(n, n);
    let q = DVector::from_fn(n, |_, _| it.next().unwrap());
    let a = DMatrix::from_fn(m, n, |_, _| it.next().unwrap());
    let rhs = DVector::from_fn(m, |_, _| it.next().unwrap());
    let mut pt = Triplets::new(n, n);
    for j in 0..n {
        for i in 0..=j {
            pt.push(i, j, p[(i, j)]);
        }
    }
    let mut at = Triplets::new(m, n);
    for i in 0..m {
        for j in 0..n {
            at.push(i, j, a[(i, j)]);
        }
    }
    let qp = SparseQP::new(
        pt,
        q.iter().copied().collect(),
        at,
        rhs.iter().copied().collect(),
        rhs.iter().copied().collect(),
    )
    .unwrap();
    (qp, p, q, a, rhs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn equality_qp_matches_dense_kkt(seed in prop::collection::vec(-1.0f64..1.0, 56)) {
        let (qp, p, q, a, rhs) = random_qp(&seed);
        let (n, m) = (6, 2);
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(&p);
        k.view_mut((n, 0), (m, n)).copy_from(&a);
        k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        let mut r = DVector::zeros(n + m);
        r.rows_mut(0, n).copy_from(&(-&q));
        r.rows_mut(n, m).copy_from(&rhs);
        let Some(sol) = k.lu().solve(&r) else { return Ok(()) };
        let rep = solve(&qp, &SolverSettings::default()).unwrap();
        prop_assert_eq!(rep.status, SolveStatus::Optimal);
        let scale = 1.0 + sol.rows(0, n).amax();
        for i in 0..n {
            prop_assert!((rep.x[i] - sol[i]).abs() <= 1e-6 * scale, "x[{}] {} vs {}", i, rep.x[i], sol[i]);
        }
    }

    #[test]
    fn warm_constraint_update_matches_cold_solve(seed in prop::collection::vec(-1.0f64..1.0, 56), shift in -0.5f64..0.5) {
        let (qp, ..) = random_qp(&seed);
        let mut next = qp.clone();
        for v in next.l.iter_mut().chain(next.u.iter_mut()) {
            *v += shift;
        }
        let mut s = Session::new(&qp, SolverSettings::default()).unwrap();
        s.solve().unwrap();
        s.update_constraints(&next).unwrap();
        let warm = s.solve().unwrap();
        let cold = solve(&next, &SolverSettings::default()).unwrap();
        prop_assert!((warm.obj - cold.obj).abs() <= 1e-7 * (1.0 + cold.obj.abs()));
    }

    #[test]
    fn tv_of_projection_is_bounded(vals in prop::collection::vec(-4.0f64..4.0, 32), k in 0usize..5) {
        let w = CellFunction::new(Partition::new(32).unwrap(), vals).unwrap();
        let pw = project_avg(&w, Partition::new(1 << k).unwrap()).unwrap();
        prop_assert!(tv(&pw) <= tv(&w) + 1e-12);
        prop_assert!(pw.l2_norm() <= w.l2_norm() + 1e-12);
    }
}
