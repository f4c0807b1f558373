//! Property checks on random data, shared by `mccpde check` and the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fem1d::{Coupling, PdeProblem, ReducedObjective};
use crate::functions::Function1d;
use crate::grid::{project_avg, tv, CellFunction, NodalFunction, Partition};
use crate::obbt::{self, ObbtSettings, Side};
use crate::relaxation::{embed_check, Envelope, RelaxationKind, RelaxationSpec, Target};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub tol: f64,
    pub passed: bool,
    pub samples: usize,
}

impl CheckResult {
    fn new(name: &'static str, worst: f64, tol: f64, samples: usize) -> Self {
        Self { name, worst, tol, passed: worst <= tol, samples }
    }
}

fn random_cells(rng: &mut ChaCha8Rng, p: Partition, lo: f64, hi: f64) -> CellFunction {
    CellFunction::from_fn(p, |_| rng.gen_range(lo..=hi))
}

/// `max(‖P f‖∞ − ‖f‖∞, ‖P f‖₂ − ‖f‖₂)` over random cell functions and grids.
pub fn projection_nonexpansive(seed: u64, samples: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let fine = Partition::new(1 << rng.gen_range(4..10))?;
        let coarse = Partition::new(fine.n_cells() >> rng.gen_range(1..4))?;
        let f = random_cells(&mut rng, fine, -5.0, 5.0);
        let p = project_avg(&f, coarse)?;
        worst = worst.max(p.linf_norm() - f.linf_norm()).max(p.l2_norm() - f.l2_norm());
    }
    Ok(CheckResult::new("projection nonexpansive", worst, 1e-12, samples))
}

/// `TV(P_h w) − TV(w)` over random controls and all coarser dyadic grids.
pub fn tv_nonexpansive(seed: u64, samples: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let fine = Partition::new(1 << rng.gen_range(3..10))?;
        let w = random_cells(&mut rng, fine, -4.0, 4.0);
        let mut n = fine.n_cells() / 2;
        while n >= 1 {
            let pw = project_avg(&w, Partition::new(n)?)?;
            worst = worst.max(tv(&pw) - tv(&w));
            n /= 2;
        }
    }
    Ok(CheckResult::new("TV nonexpansive", worst, 1e-12, samples))
}

/// `|∫ (φ − P_h φ)(P_h ψ)(P_h θ)|` for nodal `φ` on a fine grid, integrated
/// exactly cell by cell.
pub fn orthogonality(seed: u64, samples: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let fine = Partition::new(1 << rng.gen_range(4..10))?;
        let coarse = Partition::new(fine.n_cells() >> rng.gen_range(1..4))?;
        let phi = NodalFunction::new(fine, (0..=fine.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let psi = random_cells(&mut rng, coarse, -4.0, 4.0);
        let theta = random_cells(&mut rng, coarse, -4.0, 4.0);
        let pphi = project_avg(&phi, coarse)?;
        let r = fine.n_cells() / coarse.n_cells();
        let h = fine.h();
        let v = phi.values();
        let total: f64 = (0..coarse.n_cells())
            .map(|i| {
                let exact: f64 = (i * r..(i + 1) * r).map(|c| 0.5 * h * (v[c] + v[c + 1])).sum();
                let mean = pphi.values()[i] * coarse.h();
                psi.values()[i] * theta.values()[i] * (exact - mean)
            })
            .sum();
        worst = worst.max(total.abs());
    }
    Ok(CheckResult::new("orthogonality identity", worst, 1e-12, samples))
}

fn toy_spec(n: usize, nh: usize, kind: RelaxationKind) -> Result<RelaxationSpec> {
    let fem = Partition::new(n)?;
    let coarse = Partition::new(nh)?;
    let control = if kind == RelaxationKind::FullyAveragedMcChh { coarse } else { fem };
    let b = 6.0 / (2.0 * (1.0 - 4.0 / (std::f64::consts::PI.powi(2))));
    Ok(RelaxationSpec {
        kind,
        prob: PdeProblem::new(Function1d::constant(6.0), -4.0, 4.0, fem, control)?,
        env: Envelope::uniform(coarse, -b, b, -4.0, 4.0)?,
        alpha: 2.5e-4,
        u_d: Target::Function(Function1d::reference_target()),
    })
}

/// Largest constraint violation of embedded points of random controls, on
/// the initial and on the tightened envelope.
pub fn embedded_feasibility(seed: u64, samples: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for kind in [RelaxationKind::PointwiseMcC, RelaxationKind::AveragedMcCh, RelaxationKind::FullyAveragedMcChh] {
        let nh = if kind == RelaxationKind::PointwiseMcC { 64 } else { 8 };
        let spec = toy_spec(64, nh, kind)?;
        let tightened = if kind == RelaxationKind::FullyAveragedMcChh {
            Some(spec.with_envelope(obbt::tighten(&spec, &ObbtSettings::default())?.0))
        } else {
            None
        };
        for s in [Some(&spec), tightened.as_ref()].into_iter().flatten() {
            for _ in 0..samples {
                let w = if rng.gen_bool(0.5) {
                    random_cells(&mut rng, s.control_grid(), -4.0, 4.0)
                } else {
                    CellFunction::from_fn(s.control_grid(), |_| rng.gen_range(-4i32..=4) as f64)
                };
                worst = worst.max(embed_check(s, &w)?);
            }
        }
    }
    Ok(CheckResult::new("embedded-point feasibility", worst, 1e-10, 3 * samples))
}

/// Largest decrease of the per-sweep lower bound and largest wrong-way
/// bound move over OBBT runs on random targets.
pub fn obbt_monotone(seed: u64, samples: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let mut spec = toy_spec(64, 8, RelaxationKind::FullyAveragedMcChh)?;
        let u_d = NodalFunction::new(spec.fem_grid(), (0..=64).map(|_| rng.gen_range(0.0..1.5)).collect())?;
        spec.u_d = Target::Nodal(u_d);
        let out = obbt::lower_bound_after_obbt(&spec, &ObbtSettings::default())?;
        worst = worst.max(out.trace.max_objective_decrease()).max(out.m_before - out.m);
        for u in &out.trace.updates {
            let back = match u.side {
                Side::Lo => u.old - u.new,
                Side::Hi => u.new - u.old,
            };
            worst = worst.max(back);
        }
    }
    Ok(CheckResult::new("OBBT monotone trace", worst, 1e-9, samples))
}

/// `max(u_lo − u_hi)` over every envelope produced by OBBT on random data;
/// a crossing aborts the run, which counts as a failure.
pub fn bounds_never_cross(seed: u64, samples: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let nh = [4usize, 8, 16][rng.gen_range(0..3)];
        let mut spec = toy_spec(64, nh, RelaxationKind::FullyAveragedMcChh)?;
        spec.prob.f = Function1d::constant(rng.gen_range(1.0..8.0));
        let (env, _) = match obbt::tighten(&spec, &ObbtSettings::default()) {
            Ok(r) => r,
            Err(_) => return Ok(CheckResult::new("bounds never cross", f64::INFINITY, 0.0, samples)),
        };
        for (lo, hi) in env.u_lo.values().iter().zip(env.u_hi.values()) {
            worst = worst.max(lo - hi);
        }
    }
    Ok(CheckResult::new("bounds never cross", worst, 0.0, samples))
}

/// Relative difference between the adjoint gradient and central finite
/// differences of the reduced objective, averaged coupling.
pub fn adjoint_gradient(seed: u64, samples: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fem = Partition::new(256)?;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let control = Partition::new(16)?;
        let coarse = Partition::new(8)?;
        let prob = PdeProblem::new(Function1d::constant(6.0), -4.0, 4.0, fem, control)?;
        let ops = prob.operators()?;
        let u_d = Function1d::reference_target();
        let obj = ReducedObjective::new(
            &prob,
            crate::fem1d::Tracking::from_function(&ops, &u_d),
            Coupling::Averaged(coarse),
            2.5e-4,
            1e-3,
        )?;
        let w = random_cells(&mut rng, control, -3.5, 3.5);
        let g = obj.evaluate(&w, true)?.gradient.expect("gradient requested");
        let step = 1e-6;
        let fd: Vec<f64> = (0..control.n_cells())
            .map(|i| {
                let mut a = w.clone();
                let mut b = w.clone();
                a.values_mut()[i] += step;
                b.values_mut()[i] -= step;
                Ok((obj.evaluate(&a, false)?.smoothed - obj.evaluate(&b, false)?.smoothed) / (2.0 * step))
            })
            .collect::<Result<_>>()?;
        let gn = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err / gn);
    }
    Ok(CheckResult::new("adjoint gradient vs finite differences", worst, 1e-6, samples))
}

/// Every suite with its default sample count.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        projection_nonexpansive(seed, 200)?,
        tv_nonexpansive(seed + 1, 200)?,
        orthogonality(seed + 2, 200)?,
        embedded_feasibility(seed + 3, 20)?,
        obbt_monotone(seed + 4, 5)?,
        bounds_never_cross(seed + 5, 10)?,
        adjoint_gradient(seed + 6, 10)?,
    ])
}
