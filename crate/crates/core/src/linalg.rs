//! Small dense kernels on column-major storage.
//!
//! The Cholesky factor is kept as the upper triangle `R` with `R'R = A`, so
//! every inner product runs down a contiguous column.

use nalgebra::{DMatrix, DVector};

/// Relative pivot tolerance used by [`Chol::factor`].
pub const CHOL_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct Chol {
    n: usize,
    r: Vec<f64>,
}

impl Chol {
    /// Factors a symmetric positive definite matrix. Only the upper triangle
    /// of `a` is read. On failure returns the index of the first column that
    /// is numerically dependent on the preceding ones.
    pub fn factor(a: &DMatrix<f64>) -> Result<Chol, usize> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut r = a.as_slice().to_vec();
        Self::factor_in_place(&mut r, n)?;
        Ok(Chol { n, r })
    }

    pub fn factor_vec(mut r: Vec<f64>, n: usize) -> Result<Chol, usize> {
        Self::factor_in_place(&mut r, n)?;
        Ok(Chol { n, r })
    }

    fn factor_in_place(r: &mut [f64], n: usize) -> Result<(), usize> {
        for j in 0..n {
            let cj = j * n;
            let ajj = r[cj + j];
            if !(ajj > 0.0) || !ajj.is_finite() {
                return Err(j);
            }
            let mut d = ajj;
            for k in 0..j {
                d -= r[cj + k] * r[cj + k];
            }
            if !(d > CHOL_TOL * ajj) {
                return Err(j);
            }
            let rjj = d.sqrt();
            r[cj + j] = rjj;
            for i in (j + 1)..n {
                let ci = i * n;
                let mut s = r[ci + j];
                for k in 0..j {
                    s -= r[cj + k] * r[ci + k];
                }
                r[ci + j] = s / rjj;
            }
        }
        for j in 0..n {
            for i in (j + 1)..n {
                r[j * n + i] = 0.0;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.r[j * self.n + i]
    }

    /// Solves `R' z = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let ci = i * n;
            let mut s = b[i];
            for k in 0..i {
                s -= self.r[ci + k] * b[k];
            }
            b[i] = s / self.r[ci + i];
        }
    }

    /// Solves `R x = z` in place.
    pub fn backward(&self, z: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let ci = i * n;
            let xi = z[i] / self.r[ci + i];
            z[i] = xi;
            for k in 0..i {
                z[k] -= self.r[ci + k] * xi;
            }
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.forward(b);
        self.backward(b);
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * self.at(i, i).ln()).sum()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut inv = DMatrix::<f64>::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.solve_in_place(&mut e);
            inv.column_mut(j).copy_from_slice(&e);
        }
        // symmetrize against rounding
        for j in 0..n {
            for i in (j + 1)..n {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }

    /// Upper factor as a dense matrix.
    pub fn upper(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n, self.n, &self.r)
    }
}

/// Extracts the principal submatrix on `idx` (upper triangle is enough for
/// [`Chol`] but the full block is copied).
pub fn submatrix(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let p = idx.len();
    DMatrix::from_fn(p, p, |i, j| a[(idx[i], idx[j])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
