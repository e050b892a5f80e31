use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SemfxError};

/// Solve `A x = b` for symmetric positive definite `A`, adding a growing ridge
/// when the Cholesky factorization fails. Returns the solution and the ridge used.
pub fn solve_spd_with_ridge(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok((ch.solve(b), 0.0));
    }
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut ridge = 1e-10 * scale;
    while ridge <= 1e-2 * scale {
        let mut reg = a.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += ridge;
        }
        if let Some(ch) = reg.cholesky() {
            return Ok((ch.solve(b), ridge));
        }
        ridge *= 100.0;
    }
    Err(SemfxError::SingularHessian)
}

/// Inverse of a symmetric positive definite matrix, with a context label for errors.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let ch = a
        .clone()
        .cholesky()
        .ok_or_else(|| SemfxError::SingularInformation(format!("{what} is not positive definite")))?;
    let mut inv = ch.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}
