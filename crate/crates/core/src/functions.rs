//! Declarative piecewise-polynomial functions on `[0, 1]`.
//!
//! Sources and tracking targets are described as a list of segments, each
//! carrying polynomial coefficients in powers of `x`. Integrals against P1
//! hat functions are computed exactly by splitting every FEM cell at the
//! segment breakpoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellAverage, CellFunction, NodalFunction, Partition};

/// Five-point Gauss-Legendre rule on `[-1, 1]`, exact up to degree 9.
const GAUSS5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    /// Coefficients `c0, c1, ...` of `c0 + c1 x + c2 x^2 + ...`.
    pub poly: Vec<f64>,
}

impl Segment {
    fn eval(&self, x: f64) -> f64 {
        self.poly.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// A function given either as a constant or as polynomial pieces.
///
/// Pieces are closed on the right and open on the left, except that the
/// first piece also contains its left endpoint. Gaps evaluate to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Function1d {
    Constant {
        value: f64,
    },
    Piecewise {
        #[serde(default = "one")]
        scale: f64,
        segments: Vec<Segment>,
    },
}

fn one() -> f64 {
    1.0
}

impl Function1d {
    pub fn constant(value: f64) -> Self {
        Function1d::Constant { value }
    }

    pub fn piecewise(segments: Vec<Segment>) -> Result<Self> {
        let f = Function1d::Piecewise { scale: 1.0, segments };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if let Function1d::Piecewise { scale, segments } = self {
            if !scale.is_finite() {
                return Err(Error::Config("non-finite scale".into()));
            }
            let mut last = 0.0;
            for (k, s) in segments.iter().enumerate() {
                if !(s.start < s.end) || s.start < 0.0 || s.end > 1.0 {
                    return Err(Error::Config(format!("segment {k} has invalid range")));
                }
                if s.start < last {
                    return Err(Error::Config(format!("segment {k} overlaps its predecessor")));
                }
                if s.poly.is_empty() || s.poly.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Config(format!("segment {k} has no finite coefficients")));
                }
                last = s.end;
            }
        }
        Ok(())
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Function1d::Constant { value } => Some(*value),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Function1d::Constant { value } => *value,
            Function1d::Piecewise { scale, segments } => {
                for (k, s) in segments.iter().enumerate() {
                    let inside = if k == 0 || x == s.start && segments[k - 1].end < s.start {
                        x >= s.start && x <= s.end
                    } else {
                        x > s.start && x <= s.end
                    };
                    if inside {
                        return scale * s.eval(x);
                    }
                }
                0.0
            }
        }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Function1d::Constant { .. } => Vec::new(),
            Function1d::Piecewise { segments, .. } => {
                let mut b: Vec<f64> = segments.iter().flat_map(|s| [s.start, s.end]).collect();
                b.sort_by(f64::total_cmp);
                b.dedup();
                b
            }
        }
    }

    /// Exact `∫_a^b g(x) p(x) dx` for `g = self` restricted to smooth pieces
    /// and `p` a polynomial of low degree, given as a closure.
    fn integrate_on(&self, a: f64, b: f64, weight: impl Fn(f64) -> f64) -> f64 {
        let mut pts = vec![a];
        pts.extend(self.breakpoints().into_iter().filter(|&x| x > a && x < b));
        pts.push(b);
        let mut total = 0.0;
        for w in pts.windows(2) {
            let (m, r) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            // evaluate the piece at interior points only, so the jump
            // convention never matters
            total += r * GAUSS5
                .iter()
                .map(|(t, gw)| {
                    let x = m + r * t;
                    gw * self.eval(x) * weight(x)
                })
                .sum::<f64>();
        }
        total
    }

    /// `∫ self · φ_j` for every node `j` of `p` (including the boundary nodes).
    pub fn hat_loads(&self, p: Partition) -> Vec<f64> {
        let n = p.n_cells();
        let mut loads = vec![0.0; n + 1];
        if let Some(c) = self.as_constant() {
            let h = p.h();
            for (j, l) in loads.iter_mut().enumerate() {
                *l = if j == 0 || j == n { 0.5 * c * h } else { c * h };
            }
            return loads;
        }
        for i in 0..n {
            let (a, b) = p.cell(i);
            let len = b - a;
            loads[i] += self.integrate_on(a, b, |x| (b - x) / len);
            loads[i + 1] += self.integrate_on(a, b, |x| (x - a) / len);
        }
        loads
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.integrate_on(a, b, |_| 1.0)
    }

    /// Exact `∫_0^1 self^2`.
    pub fn square_integral(&self) -> f64 {
        match self {
            Function1d::Constant { value } => value * value,
            Function1d::Piecewise { .. } => self.integrate_on(0.0, 1.0, |x| self.eval(x)),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.square_integral().sqrt()
    }

    pub fn interpolate(&self, p: Partition) -> NodalFunction {
        NodalFunction::interpolate(p, |x| self.eval(x))
    }

    /// Numerical `∫_0^1 g(x) dx` where `g` may be nonsmooth at the breakpoints
    /// of `self` and at the edges of `p`. Uses five Gauss points on every piece.
    pub fn integrate_split(&self, p: Partition, g: impl Fn(f64) -> f64) -> f64 {
        let mut total = 0.0;
        let bps = self.breakpoints();
        for i in 0..p.n_cells() {
            let (a, b) = p.cell(i);
            let mut pts = vec![a];
            pts.extend(bps.iter().copied().filter(|&x| x > a && x < b));
            pts.push(b);
            for w in pts.windows(2) {
                let (m, r) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
                total += r * GAUSS5.iter().map(|(t, gw)| gw * g(m + r * t)).sum::<f64>();
            }
        }
        total
    }

    /// The tracking target used throughout the 1D experiments: a parabolic
    /// profile near the boundary joined by linear ramps to a plateau at 2.
    pub fn reference_target() -> Self {
        let parabola = vec![0.0, 1.5, -1.5];
        Function1d::Piecewise {
            scale: 1.0,
            segments: vec![
                Segment { start: 0.0, end: 0.25, poly: parabola.clone() },
                Segment { start: 0.25, end: 0.4, poly: vec![0.28125 - 0.75, 3.0] },
                Segment { start: 0.4, end: 0.6, poly: vec![2.0] },
                Segment { start: 0.6, end: 0.75, poly: vec![0.73125 + 1.8, -3.0] },
                Segment { start: 0.75, end: 1.0, poly: parabola },
            ],
        }
    }
}

impl CellAverage for Function1d {
    fn cell_averages(&self, target: Partition) -> Result<CellFunction> {
        let h = target.h();
        Ok(CellFunction::from_fn(target, |i| {
            let (a, b) = target.cell(i);
            self.integral(a, b) / h
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::project_avg;

    #[test]
    fn reference_target_is_continuous_except_at_plateau() {
        let u = Function1d::reference_target();
        assert!((u.eval(0.25) - 0.28125).abs() < 1e-15);
        assert!((u.eval(0.25 + 1e-12) - 0.28125).abs() < 1e-10);
        assert!((u.eval(0.4) - 0.73125).abs() < 1e-14);
        assert_eq!(u.eval(0.5), 2.0);
        assert!((u.eval(0.6 + 1e-12) - 0.73125).abs() < 1e-10);
        assert!((u.eval(0.75) - 0.28125).abs() < 1e-14);
        assert_eq!(u.eval(0.0), 0.0);
        assert!(u.eval(1.0).abs() < 1e-15);
    }

    #[test]
    fn hat_loads_of_linear_function() {
        // f(x) = x on 2 cells: ∫ x φ_1 = 1/4
        let f = Function1d::piecewise(vec![Segment { start: 0.0, end: 1.0, poly: vec![0.0, 1.0] }]).unwrap();
        let p = Partition::new(2).unwrap();
        let l = f.hat_loads(p);
        assert!((l[1] - 0.25).abs() < 1e-15);
        assert!((l.iter().sum::<f64>() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn loads_split_at_interior_jump() {
        // step at 0.3 inside the only cell: ∫_0.3^1 x dx = 0.455
        let f = Function1d::piecewise(vec![Segment { start: 0.3, end: 1.0, poly: vec![1.0] }]).unwrap();
        let l = f.hat_loads(Partition::new(1).unwrap());
        assert!((l[1] - 0.455).abs() < 1e-14);
        assert!((l[0] + l[1] - 0.7).abs() < 1e-14);
    }

    #[test]
    fn cell_averages_are_exact() {
        let f = Function1d::reference_target();
        let avg = project_avg(&f, Partition::new(1).unwrap()).unwrap();
        let exact = 2.0 * (0.5 * 0.25f64.powi(2) * 1.5 - 1.5 * 0.25f64.powi(3) / 3.0)
            + 2.0 * 0.15 * (0.28125 + 0.73125) / 2.0
            + 0.4;
        assert!((avg.values()[0] - exact).abs() < 1e-14);
    }

    #[test]
    fn rejects_overlapping_segments() {
        let s = |a, b| Segment { start: a, end: b, poly: vec![1.0] };
        assert!(Function1d::piecewise(vec![s(0.0, 0.5), s(0.4, 1.0)]).is_err());
        assert!(Function1d::piecewise(vec![s(0.5, 0.5)]).is_err());
    }
}
