//! Exhaustive enumeration of integer controls on very small partitions.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem1d::{Coupling, PdeProblem, ReducedObjective, DEFAULT_HUBER_EPS};
use crate::grid::{CellFunction, Partition};
use crate::relaxation::Target;

pub const MAX_CELLS: usize = 6;
pub const MAX_CONTROLS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleCoupling {
    /// `∫ (P_h w)(P_h u) v` on the control partition.
    #[default]
    Averaged,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnumerationSpec {
    pub n_cells: usize,
    pub value_set: Vec<i64>,
    pub fem_n: usize,
    #[serde(default)]
    pub coupling: OracleCoupling,
}

impl EnumerationSpec {
    pub fn count(&self) -> Option<usize> {
        self.value_set.len().checked_pow(self.n_cells as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cells == 0 || self.value_set.is_empty() {
            return Err(Error::Config("enumeration needs cells and values".into()));
        }
        if self.n_cells > MAX_CELLS {
            return Err(Error::BudgetExceeded(format!("{} cells, at most {MAX_CELLS}", self.n_cells)));
        }
        match self.count() {
            Some(c) if c <= MAX_CONTROLS => Ok(()),
            _ => Err(Error::BudgetExceeded(format!(
                "{}^{} controls exceed {MAX_CONTROLS}",
                self.value_set.len(),
                self.n_cells
            ))),
        }
    }

    /// Control with mixed-radix index `k`; the first cell varies slowest.
    pub fn control(&self, k: usize) -> Vec<f64> {
        let b = self.value_set.len();
        let mut v = vec![0.0; self.n_cells];
        let mut rest = k;
        for slot in v.iter_mut().rev() {
            *slot = self.value_set[rest % b] as f64;
            rest /= b;
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct Enumeration {
    pub w_star: CellFunction,
    pub obj_star: f64,
    /// `(index, control, objective)` in index order.
    pub table: Vec<(usize, Vec<f64>, f64)>,
}

impl Enumeration {
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let n = self.w_star.partition().n_cells();
        let cols: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        writeln!(out, "index,{},objective", cols.join(","))?;
        for (k, w, obj) in &self.table {
            let ws: Vec<String> = w.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{k},{},{obj:.17e}", ws.join(","))?;
        }
        Ok(())
    }
}

/// Objective of every control in `order`, each evaluated independently.
fn evaluate_all(
    spec: &EnumerationSpec,
    prob: &PdeProblem,
    u_d: &Target,
    alpha: f64,
    order: &[usize],
) -> Result<Vec<f64>> {
    let grid = Partition::new(spec.n_cells)?;
    let fem = Partition::new(spec.fem_n)?;
    let prob = PdeProblem::new(prob.f.clone(), prob.w_lo, prob.w_hi, fem, grid)?;
    let coupling = match spec.coupling {
        OracleCoupling::Averaged => Coupling::Averaged(grid),
        OracleCoupling::Exact => Coupling::Exact,
    };
    let ops = prob.operators()?;
    let obj = ReducedObjective::new(&prob, u_d.tracking(&ops)?, coupling, alpha, DEFAULT_HUBER_EPS)?;
    crate::with_thread_pool(|| {
        order
            .par_iter()
            .map(|&k| {
                let w = CellFunction::new(grid, spec.control(k))?;
                Ok(obj.evaluate(&w, false)?.nonsmooth)
            })
            .collect()
    })
}

fn check_values(spec: &EnumerationSpec, prob: &PdeProblem) -> Result<()> {
    for &v in &spec.value_set {
        if (v as f64) < prob.w_lo || (v as f64) > prob.w_hi {
            return Err(Error::Config(format!("value {v} outside [{}, {}]", prob.w_lo, prob.w_hi)));
        }
    }
    Ok(())
}

/// Exact optimum over all integer controls of `spec`. Ties go to the
/// smallest index.
pub fn enumerate_optimum(spec: &EnumerationSpec, prob: &PdeProblem, u_d: &Target, alpha: f64) -> Result<Enumeration> {
    spec.validate()?;
    check_values(spec, prob)?;
    let count = spec.count().expect("validated");
    let order: Vec<usize> = (0..count).collect();
    let objs = evaluate_all(spec, prob, u_d, alpha, &order)?;
    let mut best = 0;
    for (k, &v) in objs.iter().enumerate() {
        if v < objs[best] {
            best = k;
        }
    }
    let grid = Partition::new(spec.n_cells)?;
    let table = objs.iter().enumerate().map(|(k, &v)| (k, spec.control(k), v)).collect();
    Ok(Enumeration { w_star: CellFunction::new(grid, spec.control(best))?, obj_star: objs[best], table })
}

/// The same enumeration visited in reverse index order, reduced again by
/// smallest index among ties. Used to confirm determinism.
pub fn enumerate_optimum_reversed(
    spec: &EnumerationSpec,
    prob: &PdeProblem,
    u_d: &Target,
    alpha: f64,
) -> Result<(usize, f64)> {
    spec.validate()?;
    check_values(spec, prob)?;
    let count = spec.count().expect("validated");
    let order: Vec<usize> = (0..count).rev().collect();
    let objs = evaluate_all(spec, prob, u_d, alpha, &order)?;
    let mut best = (usize::MAX, f64::INFINITY);
    for (&k, &v) in order.iter().zip(&objs) {
        if v < best.1 || (v == best.1 && k < best.0) {
            best = (k, v);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::Function1d;

    fn prob() -> PdeProblem {
        let g = Partition::new(64).unwrap();
        PdeProblem::new(Function1d::constant(6.0), -4.0, 4.0, g, g).unwrap()
    }

    #[test]
    fn two_cells_two_values() {
        let spec = EnumerationSpec { n_cells: 2, value_set: vec![0, 1], fem_n: 64, coupling: OracleCoupling::Averaged };
        let u_d = Target::Function(Function1d::reference_target());
        let e = enumerate_optimum(&spec, &prob(), &u_d, 2.5e-4).unwrap();
        assert_eq!(e.table.len(), 4);
        let min = e.table.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
        assert_eq!(e.obj_star, min);
        assert_eq!(spec.control(2), vec![1.0, 0.0]);
    }

    #[test]
    fn budget_is_enforced() {
        let spec = EnumerationSpec { n_cells: 7, value_set: vec![0, 1], fem_n: 64, coupling: OracleCoupling::Averaged };
        assert!(matches!(spec.validate(), Err(Error::BudgetExceeded(_))));
        let spec =
            EnumerationSpec { n_cells: 6, value_set: (0..11).collect(), fem_n: 64, coupling: OracleCoupling::Averaged };
        assert!(matches!(spec.validate(), Err(Error::BudgetExceeded(_))));
    }

    #[test]
    fn reverse_pass_reproduces_the_optimum() {
        let spec = EnumerationSpec {
            n_cells: 4,
            value_set: (-4..=4).collect(),
            fem_n: 64,
            coupling: OracleCoupling::Averaged,
        };
        let u_d = Target::Function(Function1d::reference_target());
        let e = enumerate_optimum(&spec, &prob(), &u_d, 2.5e-4).unwrap();
        assert_eq!(e.table.len(), 6561);
        let (k, v) = enumerate_optimum_reversed(&spec, &prob(), &u_d, 2.5e-4).unwrap();
        assert_eq!(v.to_bits(), e.obj_star.to_bits());
        assert_eq!(spec.control(k), e.w_star.values());
    }

    #[test]
    fn csv_has_a_row_per_control() {
        let spec =
            EnumerationSpec { n_cells: 2, value_set: vec![-1, 0, 1], fem_n: 16, coupling: OracleCoupling::Exact };
        let u_d = Target::Function(Function1d::constant(0.2));
        let e = enumerate_optimum(&spec, &prob(), &u_d, 0.0).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.starts_with("index,w0,w1,objective"));
    }
}
