//! Dense linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value cutoff for pseudoinverses.
pub const PINV_RCOND: f64 = 1e-10;

/// Diagonal jitter (relative to the mean diagonal) tried once when a
/// Cholesky factorization fails.
pub const CHOLESKY_JITTER: f64 = 1e-12;

/// Minimum-norm least-squares solution `M^+ rhs`, treating singular values
/// below `PINV_RCOND * sigma_max` as zero.
pub fn pinv_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if m.nrows() != rhs.len() {
        return Err(Error::InvalidInput(format!(
            "right-hand side has length {} but matrix has {} rows",
            rhs.len(),
            m.nrows()
        )));
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max == 0.0 {
        return Ok(DVector::zeros(m.ncols()));
    }
    let cutoff = PINV_RCOND * sigma_max;
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("V^T requested");
    let mut coef = u.transpose() * rhs;
    for (c, &s) in coef.iter_mut().zip(svd.singular_values.iter()) {
        *c = if s > cutoff { *c / s } else { 0.0 };
    }
    Ok(v_t.transpose() * coef)
}

/// Numerical rank under the same cutoff as [`pinv_solve`].
pub fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let sigma_max = sv.max();
    sv.iter().filter(|&&s| s > PINV_RCOND * sigma_max).count()
}

/// Cholesky factor of a symmetric PSD matrix, retrying once with a small
/// diagonal jitter.
pub fn cholesky(m: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() {
        return Err(Error::InvalidInput(format!("{context}: matrix is not square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{context}: non-finite entry")));
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let jittered = m + DMatrix::identity(n, n) * (CHOLESKY_JITTER * scale);
    Cholesky::new(jittered).ok_or(Error::NotPositiveDefinite { context })
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn sym_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym).eigenvalues;
    (eig.min(), eig.max())
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pinv_solve_picks_min_norm() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let w = pinv_solve(&m, &DVector::from_vec(vec![2.0])).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rank_ignores_tiny_singular_values() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0 + 1e-14]);
        assert_eq!(rank(&m), 1);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky(&m, "test"),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn cholesky_jitter_rescues_semidefinite() {
        let m = DMatrix::from_element(3, 3, 1.0);
        assert!(cholesky(&m, "ones").is_ok());
    }
}
