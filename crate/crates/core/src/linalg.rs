//! Small shared linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

#[derive(Debug, thiserror::Error)]
#[error("matrix is not positive-definite after jitter up to {max_jitter:e}")]
pub struct CholeskyFailure {
    pub max_jitter: f64,
}

/// Lower Cholesky factor of a symmetric matrix, retrying with a jitter
/// ladder on the diagonal.
///
/// The ladder starts at `1e-10 * mean(diag)` and multiplies by 10 up to
/// `1e-4 * mean(diag)`; a zero diagonal falls back to an absolute scale of 1.
/// Returns the factor and the jitter that succeeded.
pub fn cholesky_with_jitter(mat: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), CholeskyFailure> {
    let n = mat.nrows();
    debug_assert_eq!(n, mat.ncols());
    let mean_diag = mat.diagonal().sum() / n as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };

    let mut jitter = 0.0;
    loop {
        let mut attempt = mat.clone();
        if jitter > 0.0 {
            for i in 0..n {
                attempt[(i, i)] += jitter;
            }
        }
        if let Some(chol) = attempt.cholesky() {
            return Ok((chol.unpack(), jitter));
        }
        jitter = if jitter == 0.0 {
            1e-10 * scale
        } else {
            jitter * 10.0
        };
        if jitter > 1e-4 * scale * (1.0 + 1e-12) {
            return Err(CholeskyFailure {
                max_jitter: 1e-4 * scale,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_identity_without_jitter() {
        let m = DMatrix::<f64>::identity(4, 4);
        let (l, jitter) = cholesky_with_jitter(&m).unwrap();
        assert_eq!(jitter, 0.0);
        assert!((&l * l.transpose() - m).norm() < 1e-14);
    }

    #[test]
    fn rank_deficient_matrix_uses_jitter_or_fails() {
        // Outer product: rank 1, needs the ladder.
        let v = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let m = &v * v.transpose();
        match cholesky_with_jitter(&m) {
            Ok((_, jitter)) => assert!(jitter > 0.0),
            Err(e) => assert!(e.max_jitter > 0.0),
        }
    }

    #[test]
    fn indefinite_matrix_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(cholesky_with_jitter(&m).is_err());
    }
}
