//! Dense LU factorization with partial pivoting.
//!
//! Matrices are stored row-major in a flat slice. The factorization is kept
//! around so the same factors can serve both `A x = b` and `Aᵀ y = b`, which
//! is what the differentiable solve needs for its forward and backward passes.

use crate::error::{PcmcError, Result};

#[derive(Debug, Clone)]
pub struct LuFactors {
    n: usize,
    /// Packed L (unit lower, below diagonal) and U (upper, incl. diagonal).
    lu: Vec<f64>,
    /// Row permutation: row `i` of `PA` is row `perm[i]` of `A`.
    perm: Vec<usize>,
}

impl LuFactors {
    /// Factor a square row-major matrix as `PA = LU`.
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(PcmcError::ShapeMismatch(format!(
                "LU expects {}x{} ({} entries), got {}",
                n,
                n,
                n * n,
                a.len()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(PcmcError::Singular("non-finite matrix entry".into()));
        }
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return Err(PcmcError::Singular("zero matrix".into()));
        }
        let tol = scale * f64::EPSILON * n as f64;
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();

        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for r in (k + 1)..n {
                let v = lu[r * n + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= tol {
                return Err(PcmcError::Singular(format!(
                    "pivot {best:.3e} at column {k} below tolerance {tol:.3e}"
                )));
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for r in (k + 1)..n {
                let f = lu[r * n + k] / pivot;
                lu[r * n + k] = f;
                if f != 0.0 {
                    for c in (k + 1)..n {
                        lu[r * n + c] -= f * lu[k * n + c];
                    }
                }
            }
        }
        Ok(LuFactors { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }

    /// Solve `Aᵀ y = b`, equivalently the row-vector system `y A = bᵀ`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ z = b, Lᵀ w = z, then y = Pᵀ w.
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for j in 0..i {
                s -= self.lu[j * n + i] * z[j];
            }
            z[i] = s / self.lu[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for j in (i + 1)..n {
                s -= self.lu[j * n + i] * z[j];
            }
            z[i] = s;
        }
        let mut y = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            y[p] = z[i];
        }
        y
    }
}
