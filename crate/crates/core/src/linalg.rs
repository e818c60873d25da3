//! Complex banded LU with partial pivoting (LAPACK `gbtrf`/`gbtrs` layout).
//!
//! The coupled two-channel operators interleave `(psi_m, psi_a)` per node,
//! which gives a pentadiagonal matrix (`kl = ku = 2`). Pivoting grows the
//! upper bandwidth to `kl + ku`.

use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Square banded matrix. Row `i`, column `j` is stored when
/// `i - kl <= j <= i + ku`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    // row-major: row i holds columns i-kl ..= i+ku+kl (extra kl for pivot fill-in)
    data: Vec<Complex64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, data: vec![ZERO; n * width] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn width(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width() + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if j + self.kl < i || j > i + self.ku {
            return ZERO;
        }
        self.data[self.slot(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: Complex64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut acc = ZERO;
            for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                acc += self.data[self.slot(i, j)] * xj;
            }
            *yi = acc;
        }
    }

    /// LU factorization with row partial pivoting.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let ku_eff = self.kl + self.ku;
        let mut pivots = Vec::with_capacity(n);
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].norm();
            for i in k + 1..=last_row {
                let v = self.data[self.slot(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::IllConditioned { estimate: f64::INFINITY });
            }
            pivots.push(p);
            let last_col = (k + ku_eff).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            max_pivot = max_pivot.max(best);
            min_pivot = min_pivot.min(best);
            for i in k + 1..=last_row {
                let s = self.slot(i, k);
                let factor = self.data[s] / pivot;
                self.data[s] = factor;
                if factor == ZERO {
                    continue;
                }
                for j in k + 1..=last_col {
                    let kj = self.data[self.slot(k, j)];
                    let ij = self.slot(i, j);
                    self.data[ij] -= factor * kj;
                }
            }
        }
        let estimate = max_pivot / min_pivot;
        Ok(BandLu { m: self, pivots, condition_estimate: estimate })
    }
}

/// Factorized band matrix, reusable for many right-hand sides.
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    pivots: Vec<usize>,
    condition_estimate: f64,
}

impl BandLu {
    /// Ratio of the largest to the smallest pivot magnitude. A cheap lower
    /// bound proxy for the condition number.
    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.m.n;
        let kl = self.m.kl;
        let ku_eff = self.m.kl + self.m.ku;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != ZERO {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.m.data[self.m.slot(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for j in k + 1..=(k + ku_eff).min(n - 1) {
                acc -= self.m.data[self.m.slot(k, j)] * b[j];
            }
            b[k] = acc / self.m.data[self.m.slot(k, k)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn matches_dense_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let mut a = BandMatrix::zeros(n, 2, 2);
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 2).min(n - 1) {
                // weak diagonal forces real pivoting
                let scale = if i == j { 0.01 } else { 1.0 };
                a.set(i, j, c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * scale);
            }
        }
        let x: Vec<Complex64> = (0..n).map(|i| c(i as f64, 1.0 - i as f64 * 0.1)).collect();
        let mut b = vec![ZERO; n];
        a.mul_vec(&x, &mut b);
        let lu = a.factor().unwrap();
        lu.solve_in_place(&mut b);
        let err = x.iter().zip(&b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn singular_is_reported() {
        let a = BandMatrix::zeros(3, 1, 1);
        assert!(matches!(a.factor(), Err(Error::IllConditioned { .. })));
    }
}
