//! Small dense helpers shared by the evolution and eigensolver code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::C64;

/// Vectors shorter than this are reduced serially.
pub(crate) const PAR_THRESHOLD: usize = 1 << 14;
/// Fixed chunk length for parallel reductions; keeps summation order stable.
pub(crate) const REDUCE_CHUNK: usize = 1 << 12;

/// Eigen-decomposition of a real symmetric matrix, eigenvalues ascending.
pub(crate) fn symmetric_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Symmetric tridiagonal matrix from its diagonal and off-diagonal.
pub(crate) fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    t
}

/// `exp(−i·dt·T)·e₁` for a symmetric tridiagonal `T`.
pub(crate) fn expm_tridiag_e1(alpha: &[f64], beta: &[f64], dt: f64) -> DVector<C64> {
    let (values, vectors) = symmetric_eigen(tridiagonal(alpha, beta));
    let m = alpha.len();
    DVector::from_fn(m, |r, _| {
        (0..m)
            .map(|k| {
                let phase = C64::from_polar(1.0, -dt * values[k]);
                phase * (vectors[(r, k)] * vectors[(0, k)])
            })
            .sum()
    })
}

/// `Σ conj(a_i) b_i` with a deterministic summation order.
pub(crate) fn cdot(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() < PAR_THRESHOLD {
        return a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    }
    let partial: Vec<C64> = a
        .par_chunks(REDUCE_CHUNK)
        .zip(b.par_chunks(REDUCE_CHUNK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x.conj() * y).sum())
        .collect();
    partial.into_iter().sum()
}

pub(crate) fn norm_sqr(a: &[C64]) -> f64 {
    if a.len() < PAR_THRESHOLD {
        return a.iter().map(|x| x.norm_sqr()).sum();
    }
    let partial: Vec<f64> = a
        .par_chunks(REDUCE_CHUNK)
        .map(|c| c.iter().map(|x| x.norm_sqr()).sum())
        .collect();
    partial.into_iter().sum()
}

/// `y ← y + s·x`
pub(crate) fn axpy(s: C64, x: &[C64], y: &mut [C64]) {
    if y.len() < PAR_THRESHOLD {
        y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += s * xi);
    } else {
        y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi += s * xi);
    }
}

pub(crate) fn scale(s: f64, y: &mut [C64]) {
    if y.len() < PAR_THRESHOLD {
        y.iter_mut().for_each(|v| *v *= s);
    } else {
        y.par_iter_mut().for_each(|v| *v *= s);
    }
}
