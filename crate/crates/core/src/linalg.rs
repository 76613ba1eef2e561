//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{CovMatchError, Result};

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn l1_norm(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn diag_sq_norm(a: &DMatrix<f64>) -> f64 {
    a.diagonal().iter().map(|x| x * x).sum()
}

/// `‖AᵀA − I‖_F`.
pub fn orthogonality_residual(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    (a.transpose() * a - DMatrix::<f64>::identity(n, n)).norm()
}

pub fn is_finite(a: &DMatrix<f64>) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// 2-norm condition number via singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of `I − S`, rejecting numerically singular systems.
pub fn inverse_i_minus(s: &DMatrix<f64>, max_cond: f64) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    let a = DMatrix::<f64>::identity(n, n) - s;
    let cond = condition_number(&a);
    if !cond.is_finite() || cond > max_cond {
        return Err(CovMatchError::Singular { cond });
    }
    a.try_inverse().ok_or(CovMatchError::Singular { cond })
}

/// Principal square root of a symmetric positive-definite matrix.
pub fn spd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetrize(a).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
        return Err(CovMatchError::Parameter(
            "matrix is not positive definite".into(),
        ));
    }
    let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.sqrt()));
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&d) * q.transpose())))
}

/// Sign with `sign(0) = 0`.
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
