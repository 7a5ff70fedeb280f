//! Small dense linear-algebra helpers shared by the filter and the optimizers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Solves `X = A X Aᵀ + Q` through the Kronecker system `(I - A⊗A) vec X = vec Q`.
///
/// Requires a Schur-stable `A`; the result is symmetrized.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::UnstableProcess(rho));
    }
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - a.kronecker(a);
    // vec(.) is column-major, which is nalgebra's storage order.
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidModel("Lyapunov system is singular".into()))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(symmetrize(&x))
}

/// `(X + Xᵀ) / 2`.
pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Largest singular value, by power iteration on `AᵀA`.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let ata = a.transpose() * a;
    // A deterministic start that is not orthogonal to any axis.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + i as f64 * 0.1);
    v /= v.norm();
    let mut sigma2 = 0.0;
    for _ in 0..10_000 {
        let w = &ata * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - sigma2).abs() <= 1e-12 * next.abs().max(1e-300) {
            sigma2 = next;
            break;
        }
        sigma2 = next;
    }
    sigma2.max(0.0).sqrt()
}

/// Numerical rank by Gaussian elimination with complete pivoting.
///
/// Pivots below `tol_scale * max|entry|` count as zero.
pub fn numerical_rank(m: &DMatrix<f64>, tol_scale: f64) -> usize {
    let mut work = m.clone();
    let (rows, cols) = work.shape();
    let scale = work.amax();
    if scale == 0.0 {
        return 0;
    }
    let tol = tol_scale * scale;
    let mut rank = 0;
    for step in 0..rows.min(cols) {
        let mut best = (step, step, 0.0);
        for r in step..rows {
            for c in step..cols {
                let v = work[(r, c)].abs();
                if v > best.2 {
                    best = (r, c, v);
                }
            }
        }
        if best.2 <= tol {
            break;
        }
        work.swap_rows(step, best.0);
        work.swap_columns(step, best.1);
        let pivot = work[(step, step)];
        for r in step + 1..rows {
            let factor = work[(r, step)] / pivot;
            if factor != 0.0 {
                for c in step..cols {
                    let delta = factor * work[(step, c)];
                    work[(r, c)] -= delta;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(x: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    symmetrize(x)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
