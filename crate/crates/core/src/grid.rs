//! Uniform partitions of the unit interval and the functions that live on them.
//!
//! Cell functions are piecewise constant on a [`Partition`]; nodal functions
//! are continuous piecewise linear with one value per cell edge. The
//! averaging projection onto a partition is exact for both kinds and uses
//! three-point Gauss quadrature per cell for arbitrary callables.

use crate::error::{Error, Result};

/// Uniform partition of `(0, 1)` into `n_cells` intervals of width `1 / n_cells`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Partition {
    n_cells: usize,
}

impl Partition {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::InvalidPartition("a partition needs at least one cell".into()));
        }
        Ok(Self { n_cells })
    }

    /// Builds a partition from explicit edges. Only uniform meshes of the unit
    /// interval are accepted.
    pub fn from_edges(edges: &[f64]) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidPartition("need at least two edges".into()));
        }
        let n = edges.len() - 1;
        let h = 1.0 / n as f64;
        if edges[0] != 0.0 || edges[n] != 1.0 {
            return Err(Error::InvalidPartition("edges must start at 0 and end at 1".into()));
        }
        for w in edges.windows(2) {
            if (w[1] - w[0] - h).abs() > 1e-14 {
                return Err(Error::InvalidPartition(format!("non-uniform spacing {} (expected {h})", w[1] - w[0])));
            }
        }
        Self::new(n)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    pub fn edge(&self, i: usize) -> f64 {
        if i == self.n_cells {
            1.0
        } else {
            i as f64 / self.n_cells as f64
        }
    }

    pub fn cell_edges(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|i| self.edge(i)).collect()
    }

    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.edge(i), self.edge(i + 1))
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.n_cells as f64
    }

    /// Index of the cell containing `x`; cells are half-open on the left except the last.
    pub fn locate(&self, x: f64) -> usize {
        let i = (x * self.n_cells as f64).floor();
        (i.max(0.0) as usize).min(self.n_cells - 1)
    }

    pub fn refine(&self) -> Self {
        Self { n_cells: self.n_cells * 2 }
    }

    /// Number of cells of `self` inside each cell of `coarse`.
    pub fn ratio_to(&self, coarse: &Partition) -> Result<usize> {
        if !self.n_cells.is_multiple_of(coarse.n_cells) {
            return Err(Error::IncompatibleGrids(format!(
                "{} cells is not a multiple of {} cells",
                self.n_cells, coarse.n_cells
            )));
        }
        Ok(self.n_cells / coarse.n_cells)
    }

    pub fn is_refinement_of(&self, coarse: &Partition) -> bool {
        self.n_cells.is_multiple_of(coarse.n_cells)
    }
}

/// Doubles the number of cells.
pub fn refine(p: &Partition) -> Partition {
    p.refine()
}

/// Piecewise constant function on a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFunction {
    partition: Partition,
    values: Vec<f64>,
}

impl CellFunction {
    pub fn new(partition: Partition, values: Vec<f64>) -> Result<Self> {
        if values.len() != partition.n_cells() {
            return Err(Error::DimensionMismatch(format!(
                "{} cell values for a partition with {} cells",
                values.len(),
                partition.n_cells()
            )));
        }
        Ok(Self { partition, values })
    }

    pub fn constant(partition: Partition, value: f64) -> Self {
        Self { partition, values: vec![value; partition.n_cells()] }
    }

    pub fn from_fn(partition: Partition, mut f: impl FnMut(usize) -> f64) -> Self {
        let values = (0..partition.n_cells()).map(&mut f).collect();
        Self { partition, values }
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at `x`, using left-closed cells.
    pub fn eval(&self, x: f64) -> f64 {
        self.values[self.partition.locate(x)]
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.partition.h()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.partition.h()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.partition.h()).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same function represented on a refinement of its partition.
    pub fn prolong(&self, fine: Partition) -> Result<Self> {
        let r = fine.ratio_to(&self.partition)?;
        let values = (0..fine.n_cells()).map(|j| self.values[j / r]).collect();
        Ok(Self { partition: fine, values })
    }

    /// L1 distance to another cell function; the finer of the two grids is used.
    pub fn l1_distance(&self, other: &CellFunction) -> Result<f64> {
        let fine = if self.partition.n_cells() >= other.partition.n_cells() { self.partition } else { other.partition };
        let a = self.prolong(fine)?;
        let b = other.prolong(fine)?;
        Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() * fine.h())
    }
}

/// Continuous piecewise linear function given by its values at the cell edges.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalFunction {
    partition: Partition,
    values: Vec<f64>,
}

impl NodalFunction {
    pub fn new(partition: Partition, values: Vec<f64>) -> Result<Self> {
        if values.len() != partition.n_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "{} nodal values for a partition with {} nodes",
                values.len(),
                partition.n_nodes()
            )));
        }
        Ok(Self { partition, values })
    }

    pub fn zeros(partition: Partition) -> Self {
        Self { partition, values: vec![0.0; partition.n_nodes()] }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(partition: Partition, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..partition.n_nodes()).map(|i| f(partition.edge(i))).collect();
        Self { partition, values }
    }

    /// Homogeneous Dirichlet function from interior values.
    pub fn from_interior(partition: Partition, interior: &[f64]) -> Result<Self> {
        if interior.len() + 2 != partition.n_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "{} interior values for {} nodes",
                interior.len(),
                partition.n_nodes()
            )));
        }
        let mut values = Vec::with_capacity(partition.n_nodes());
        values.push(0.0);
        values.extend_from_slice(interior);
        values.push(0.0);
        Ok(Self { partition, values })
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interior(&self) -> &[f64] {
        &self.values[1..self.values.len() - 1]
    }

    pub fn eval(&self, x: f64) -> f64 {
        let p = self.partition;
        let i = p.locate(x);
        let (a, b) = p.cell(i);
        let t = (x - a) / (b - a);
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Exact L2 norm of the piecewise linear function.
    pub fn l2_norm(&self) -> f64 {
        let h = self.partition.h();
        let s: f64 = self.values.windows(2).map(|v| (v[0] * v[0] + v[0] * v[1] + v[1] * v[1]) / 3.0).sum();
        (s * h).sqrt()
    }

    /// Exact L2 norm of the derivative.
    pub fn h1_seminorm(&self) -> f64 {
        let h = self.partition.h();
        let s: f64 = self.values.windows(2).map(|v| (v[1] - v[0]).powi(2)).sum();
        (s / h).sqrt()
    }

    pub fn sub(&self, other: &NodalFunction) -> Result<NodalFunction> {
        if self.partition != other.partition {
            return Err(Error::IncompatibleGrids("nodal functions on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(NodalFunction { partition: self.partition, values })
    }

    /// Cell averages on the partition carrying the function.
    pub fn cell_means(&self) -> CellFunction {
        let values = self.values.windows(2).map(|v| 0.5 * (v[0] + v[1])).collect();
        CellFunction { partition: self.partition, values }
    }
}

/// Anything that can be averaged cell by cell onto a target partition.
pub trait CellAverage {
    fn cell_averages(&self, target: Partition) -> Result<CellFunction>;
}

impl CellAverage for CellFunction {
    fn cell_averages(&self, target: Partition) -> Result<CellFunction> {
        let src = self.partition;
        if src.is_refinement_of(&target) {
            let r = src.n_cells() / target.n_cells();
            let values = self.values.chunks(r).map(|c| c.iter().sum::<f64>() / r as f64).collect();
            Ok(CellFunction { partition: target, values })
        } else if target.is_refinement_of(&src) {
            self.prolong(target)
        } else {
            Err(Error::IncompatibleGrids(format!(
                "cannot average {} cells onto {} cells",
                src.n_cells(),
                target.n_cells()
            )))
        }
    }
}

impl CellAverage for NodalFunction {
    fn cell_averages(&self, target: Partition) -> Result<CellFunction> {
        let src = self.partition;
        if src.is_refinement_of(&target) {
            self.cell_means().cell_averages(target)
        } else if target.is_refinement_of(&src) {
            // linear within each source cell: the average is the midpoint value
            Ok(CellFunction::from_fn(target, |i| self.eval(target.midpoint(i))))
        } else {
            Err(Error::IncompatibleGrids(format!(
                "cannot average a {}-cell nodal function onto {} cells",
                src.n_cells(),
                target.n_cells()
            )))
        }
    }
}

/// Wraps a closure so it can be averaged with per-cell Gauss quadrature.
pub struct Callable<F>(pub F);

pub(crate) const GAUSS3: [(f64, f64); 3] =
    [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];

impl<F: Fn(f64) -> f64> CellAverage for Callable<F> {
    fn cell_averages(&self, target: Partition) -> Result<CellFunction> {
        Ok(CellFunction::from_fn(target, |i| {
            let (a, b) = target.cell(i);
            let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
            0.5 * GAUSS3.iter().map(|(x, w)| w * (self.0)(m + r * x)).sum::<f64>()
        }))
    }
}

/// Averaging projection onto `target`.
pub fn project_avg<S: CellAverage + ?Sized>(f: &S, target: Partition) -> Result<CellFunction> {
    f.cell_averages(target)
}

/// Total variation of a piecewise constant function: the sum of the interior jump heights.
pub fn tv(w: &CellFunction) -> f64 {
    tv_values(w.values())
}

pub(crate) fn tv_values(v: &[f64]) -> f64 {
    v.windows(2).map(|p| (p[1] - p[0]).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(n: usize) -> Partition {
        Partition::new(n).unwrap()
    }

    #[test]
    fn average_of_identity() {
        let avg = project_avg(&Callable(|x: f64| x), p(2)).unwrap();
        assert!((avg.values()[0] - 0.25).abs() < 1e-15);
        assert!((avg.values()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn constants_are_preserved() {
        for n in [1, 3, 8] {
            let avg = project_avg(&Callable(|_| 6.0), p(n)).unwrap();
            assert!(avg.values().iter().all(|&v| (v - 6.0).abs() < 1e-14));
            let c = CellFunction::constant(p(16), 6.0);
            if 16 % n == 0 {
                let a = project_avg(&c, p(n)).unwrap();
                assert!(a.values().iter().all(|&v| v == 6.0));
            }
        }
    }

    #[test]
    fn hat_function_average() {
        let u = NodalFunction::new(p(2), vec![0.0, 0.75, 0.0]).unwrap();
        let avg = project_avg(&u, p(2)).unwrap();
        assert_eq!(avg.values(), &[0.375, 0.375]);
        let one = project_avg(&u, p(1)).unwrap();
        assert_eq!(one.values(), &[0.375]);
    }

    #[test]
    fn incompatible_grids_are_rejected() {
        let w = CellFunction::constant(p(6), 1.0);
        assert!(matches!(project_avg(&w, p(4)), Err(Error::IncompatibleGrids(_))));
        let u = NodalFunction::zeros(p(6));
        assert!(matches!(project_avg(&u, p(4)), Err(Error::IncompatibleGrids(_))));
    }

    #[test]
    fn total_variation_examples() {
        let w = |v: Vec<f64>| CellFunction::new(p(v.len()), v).unwrap();
        assert_eq!(tv(&w(vec![1.0, 1.0, 0.0, 0.0])), 1.0);
        assert_eq!(tv(&w(vec![2.5; 7])), 0.0);
        assert_eq!(tv(&w(vec![-4.0, 4.0, -4.0])), 16.0);
    }

    #[test]
    fn refinement_doubles() {
        assert_eq!(refine(&p(8)).n_cells(), 16);
        assert_eq!(refine(&p(8)).h(), 0.0625);
        assert_eq!(refine(&refine(&p(256))).n_cells(), 1024);
    }

    #[test]
    fn edges_are_uniform() {
        let q = p(1000);
        let e = q.cell_edges();
        assert_eq!(e[0], 0.0);
        assert_eq!(*e.last().unwrap(), 1.0);
        assert!(e.windows(2).all(|w| (w[1] - w[0] - q.h()).abs() <= 1e-14));
        assert!(Partition::from_edges(&e).is_ok());
        assert!(Partition::from_edges(&[0.0, 0.3, 1.0]).is_err());
        assert!(Partition::new(0).is_err());
    }

    #[test]
    fn nodal_norms_are_exact() {
        // u(x) = x on one cell: ||u||^2 = 1/3, ||u'||^2 = 1
        let u = NodalFunction::new(p(1), vec![0.0, 1.0]).unwrap();
        assert!((u.l2_norm().powi(2) - 1.0 / 3.0).abs() < 1e-15);
        assert!((u.h1_seminorm() - 1.0).abs() < 1e-15);
    }
}
