//! Small direct solvers for the structured systems that appear in the FEM code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix with `diag.len() == n` and `off.len() == n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        debug_assert_eq!(off.len() + 1, diag.len().max(1));
        Self { diag, off }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y: Vec<f64> = (0..n).map(|i| self.diag[i] * x[i]).collect();
        for i in 0..n.saturating_sub(1) {
            y[i] += self.off[i] * x[i + 1];
            y[i + 1] += self.off[i] * x[i];
        }
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }

    pub fn add(&self, other: &SymTridiag) -> SymTridiag {
        SymTridiag {
            diag: self.diag.iter().zip(&other.diag).map(|(a, b)| a + b).collect(),
            off: self.off.iter().zip(&other.off).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> SymTridiag {
        SymTridiag { diag: self.diag.iter().map(|a| a * s).collect(), off: self.off.iter().map(|a| a * s).collect() }
    }

    /// LDLᵀ factorization; fails unless every pivot is positive.
    pub fn factor(&self) -> Result<TridiagFactor> {
        let n = self.n();
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        for i in 0..n {
            let mut piv = self.diag[i];
            if i > 0 {
                piv -= l[i - 1] * l[i - 1] * d[i - 1];
            }
            if !(piv > 0.0) || !piv.is_finite() {
                return Err(Error::SingularSystem(format!("nonpositive pivot {piv:e} at row {i}")));
            }
            d[i] = piv;
            if i + 1 < n {
                l[i] = self.off[i] / piv;
            }
        }
        Ok(TridiagFactor { d, l })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.factor()?.solve(b))
    }

    pub fn to_banded(&self) -> BandedSym {
        let mut b = BandedSym::zeros(self.n(), 1);
        for i in 0..self.n() {
            b.add(i, i, self.diag[i]);
            if i + 1 < self.n() {
                b.add(i + 1, i, self.off[i]);
            }
        }
        b
    }
}

#[derive(Debug, Clone)]
pub struct TridiagFactor {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl TridiagFactor {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut x = b.to_vec();
        for i in 1..n {
            x[i] -= self.l[i - 1] * x[i - 1];
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.l[i] * x[i + 1];
        }
        x
    }
}

/// Symmetric band matrix storing the lower triangle: `band[i][k] = A[i][i-k]`.
#[derive(Debug, Clone)]
pub struct BandedSym {
    n: usize,
    kd: usize,
    band: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, kd: usize) -> Self {
        Self { n, kd, band: vec![0.0; n * (kd + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.kd
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.kd);
        i * (self.kd + 1) + (i - j)
    }

    /// Adds `v` to the entry `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.band[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.kd {
            0.0
        } else {
            self.band[self.idx(i, j)]
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kd);
            for j in lo..=i {
                let a = self.band[self.idx(i, j)];
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// Banded Cholesky `A = L Lᵀ`, overwriting a copy of the band.
    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let (n, kd) = (self.n, self.kd);
        let mut l = self.band.clone();
        let w = kd + 1;
        for j in 0..n {
            let lo = j.saturating_sub(kd);
            let mut s = l[j * w];
            for k in lo..j {
                let v = l[j * w + (j - k)];
                s -= v * v;
            }
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::SingularSystem(format!("nonpositive pivot {s:e} at row {j}")));
            }
            let d = s.sqrt();
            l[j * w] = d;
            for i in j + 1..(j + kd + 1).min(n) {
                let lo_i = i.saturating_sub(kd);
                let mut s = l[i * w + (i - j)];
                for k in lo_i.max(lo)..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                l[i * w + (i - j)] = s / d;
            }
        }
        Ok(BandedCholesky { n, kd, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    kd: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let w = self.kd + 1;
        let mut x = b.to_vec();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kd);
            let mut s = x[i];
            for k in lo..i {
                s -= self.l[i * w + (i - k)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.kd + 1).min(self.n);
            let mut s = x[i];
            for k in i + 1..hi {
                s -= self.l[k * w + (k - i)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
        x
    }
}

/// Solves `(T + U Vᵀ) x = b` for tridiagonal SPD `T` and a thin update
/// through the capacitance matrix `I + Vᵀ T⁻¹ U`.
pub fn solve_low_rank_update(
    t: &SymTridiag,
    u_cols: &[Vec<(usize, f64)>],
    v_cols: &[Vec<(usize, f64)>],
    b: &[f64],
) -> Result<Vec<f64>> {
    let fac = t.factor()?;
    let n = t.n();
    let k = u_cols.len();
    let y = fac.solve(b);
    let mut tinv_u = Vec::with_capacity(k);
    for col in u_cols {
        let mut e = vec![0.0; n];
        for &(i, v) in col {
            e[i] += v;
        }
        tinv_u.push(fac.solve(&e));
    }
    let mut cap = DMatrix::<f64>::identity(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for (r, vcol) in v_cols.iter().enumerate() {
        rhs[r] = vcol.iter().map(|&(i, v)| v * y[i]).sum();
        for (c, tu) in tinv_u.iter().enumerate() {
            cap[(r, c)] += vcol.iter().map(|&(i, v)| v * tu[i]).sum::<f64>();
        }
    }
    let coef = cap.lu().solve(&rhs).ok_or_else(|| Error::SingularSystem("singular capacitance matrix".into()))?;
    let mut x = y;
    for (c, tu) in tinv_u.iter().enumerate() {
        for i in 0..n {
            x[i] -= coef[c] * tu[i];
        }
    }
    Ok(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace(n: usize) -> SymTridiag {
        SymTridiag::new(vec![2.0; n], vec![-1.0; n - 1])
    }

    #[test]
    fn tridiagonal_solve_roundtrip() {
        let t = laplace(50);
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = t.matvec(&x);
        let y = t.solve(&b).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn banded_matches_tridiagonal() {
        let t = laplace(30);
        let mut band = BandedSym::zeros(30, 4);
        for i in 0..30 {
            band.add(i, i, 2.0);
            if i > 0 {
                band.add(i, i - 1, -1.0);
            }
        }
        for i in 4..30 {
            band.add(i, i - 4, 0.1);
        }
        let b: Vec<f64> = (0..30).map(|i| 1.0 + i as f64).collect();
        let x = band.cholesky().unwrap().solve(&b);
        let r = band.matvec(&x);
        assert!(r.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-11));
        let x0 = t.to_banded().cholesky().unwrap().solve(&b);
        let x1 = t.solve(&b).unwrap();
        assert!(x0.iter().zip(&x1).all(|(a, b)| (a - b).abs() < 1e-12 * a.abs().max(1.0)));
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let t = SymTridiag::new(vec![1.0, -1.0], vec![0.0]);
        assert!(matches!(t.solve(&[1.0, 1.0]), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn low_rank_update_matches_banded() {
        let n = 20;
        let t = laplace(n);
        let u = vec![vec![(0, 0.5), (1, 0.5)], vec![(5, 1.0), (6, 0.3)]];
        let v = vec![vec![(0, 0.2), (1, 0.2)], vec![(5, 0.4), (6, 0.12)]];
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let x = solve_low_rank_update(&t, &u, &v, &b).unwrap();
        let mut ax = t.matvec(&x);
        for (uc, vc) in u.iter().zip(&v) {
            let s: f64 = vc.iter().map(|&(i, w)| w * x[i]).sum();
            for &(i, w) in uc {
                ax[i] += w * s;
            }
        }
        assert!(ax.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
