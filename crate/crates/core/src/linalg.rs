//! Small dense linear algebra: cyclic Jacobi eigendecomposition for symmetric
//! matrices and the PSD matrix square root built on it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fm;
use crate::tensor::Tensor;

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Row i holds the eigenvector for `values[i]`.
    pub vectors: Tensor,
}

/// Cyclic Jacobi rotations until off-diagonal mass is below `1e-14 * scale`.
/// Quadratic convergence makes ~8 sweeps enough for the 64x64 matrices used
/// here.
pub fn sym_eigen(a: &Tensor) -> Result<SymEigen> {
    let n = a.shape()[0];
    if a.shape() != [n, n] {
        return Err(Error::shape("sym_eigen expects a square matrix"));
    }
    if !a.all_finite() {
        return Err(Error::numeric("sym_eigen: non-finite input"));
    }
    let mut m = a.data().to_vec();
    // v starts as identity; rows accumulate the rotations.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let scale = m
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let tol = 1e-14 * scale;
    let max_sweeps = 64;

    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(m[i * n + j].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + fm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + fm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / fm::sqrt(1.0 + t * t);
                let s = t * c;
                // Rotate rows/cols p and q of m.
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                // Accumulate into eigenvector rows.
                for k in 0..n {
                    let vpk = v[p * n + k];
                    let vqk = v[q * n + k];
                    v[p * n + k] = c * vpk - s * vqk;
                    v[q * n + k] = s * vpk + c * vqk;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    // Stable descending sort keeps the natural basis order on exact ties.
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap_or(core::cmp::Ordering::Equal));

    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (row, &i) in order.iter().enumerate() {
        vectors[row * n..(row + 1) * n].copy_from_slice(&v[i * n..(i + 1) * n]);
    }

    Ok(SymEigen {
        values,
        vectors: Tensor::new(vec![n, n], vectors),
    })
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// (numerical noise in covariance estimates) are clamped to zero.
pub fn sqrtm_psd(a: &Tensor) -> Result<Tensor> {
    let n = a.shape()[0];
    let eig = sym_eigen(a)?;
    let mut out = vec![0.0; n * n];
    for (k, &lam) in eig.values.iter().enumerate() {
        let s = fm::sqrt(lam.max(0.0));
        if s == 0.0 {
            continue;
        }
        let row = &eig.vectors.data()[k * n..(k + 1) * n];
        for i in 0..n {
            let si = s * row[i];
            for j in 0..n {
                out[i * n + j] += si * row[j];
            }
        }
    }
    Ok(Tensor::new(vec![n, n], out))
}

/// Trace of the PSD square root, with the same clamping rule as [`sqrtm_psd`].
pub fn trace_sqrtm_psd(a: &Tensor) -> Result<f64> {
    let eig = sym_eigen(a)?;
    Ok(eig.values.iter().map(|&l| fm::sqrt(l.max(0.0))).sum())
}
