//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Cholesky factorization with a single jitter retry.
///
/// On failure, `1e-10 * trace / n` is added to the diagonal once; a second
/// failure is reported as [`Error::Cholesky`].
pub fn cholesky_with_jitter(matrix: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = matrix.nrows();
    if let Some(chol) = matrix.clone().cholesky() {
        return Ok(chol);
    }
    let jitter = if n == 0 {
        0.0
    } else {
        1e-10 * matrix.trace() / n as f64
    };
    log::debug!("Cholesky failed for n = {n}; retrying with jitter {jitter:e}");
    let mut jittered = matrix;
    for i in 0..n {
        jittered[(i, i)] += jitter;
    }
    jittered.cholesky().ok_or(Error::Cholesky { n })
}

/// `ln det(A)` from a Cholesky factor of `A`.
pub fn logdet_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

/// `ln det(I + K / lambda)` for a symmetric PSD `K`.
pub fn logdet_regularized(gram: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let n = gram.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let m = DMatrix::identity(n, n) + gram / lambda;
    Ok(logdet_from_cholesky(&cholesky_with_jitter(m)?))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    symmetrize(sym)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral norm `sqrt(lambda_max(M^T M))` via a symmetric eigendecomposition.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = m.transpose() * m;
    symmetrize(&gram)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .max(0.0)
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert!((spectral_norm(&m) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_nonsymmetric() {
        // [[1, 1], [0, 1]] has singular values (sqrt(5) +- 1) / 2.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let expected = (5.0f64.sqrt() + 1.0) / 2.0;
        assert!((spectral_norm(&m) - expected).abs() < 1e-12);
    }

    #[test]
    fn logdet_of_two_by_two() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        // det([[2, 1], [1, 2]]) = 3
        assert!((logdet_regularized(&k, 1.0).unwrap() - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky_with_jitter(k).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_with_jitter(bad),
            Err(Error::Cholesky { n: 2 })
        ));
    }
}
