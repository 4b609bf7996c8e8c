//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor used for every positive-definiteness check.
pub const PD_REL_TOL: f64 = 1e-12;

/// Checks a symmetric matrix for positive definiteness: the smallest
/// eigenvalue must exceed `PD_REL_TOL` times the largest.
pub fn check_positive_definite(m: &DMatrix<f64>) -> Result<()> {
    let eig = SymmetricEigen::new(m.clone());
    let min_eig = eig.eigenvalues.min();
    let max_eig = eig.eigenvalues.max();
    if !(max_eig > 0.0) || !(min_eig > PD_REL_TOL * max_eig) {
        return Err(Error::NotPositiveDefinite { min_eig, max_eig });
    }
    Ok(())
}

pub fn check_positive_definite2(m: &Matrix2<f64>) -> Result<()> {
    let (lo, hi) = eigenvalues2(m);
    if !(hi > 0.0) || !(lo > PD_REL_TOL * hi) {
        return Err(Error::NotPositiveDefinite { min_eig: lo, max_eig: hi });
    }
    Ok(())
}

/// Eigenvalues (ascending) of a symmetric 2×2 matrix.
pub fn eigenvalues2(m: &Matrix2<f64>) -> (f64, f64) {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean - rad, mean + rad)
}

/// Adjugate of a 2×2 matrix; equals `|A| A⁻¹` whenever `A` is invertible.
#[inline]
pub fn adjugate2(m: &Matrix2<f64>) -> Matrix2<f64> {
    Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)])
}

#[inline]
pub fn det2(m: &Matrix2<f64>) -> f64 {
    m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
}

/// Symmetric inverse square root of a symmetric positive-definite 2×2 matrix.
pub fn inv_sqrt_sym2(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    check_positive_definite2(m)?;
    let eig = SymmetricEigen::new(*m);
    let d = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let q = eig.eigenvectors;
    Ok(q * Matrix2::from_diagonal(&d) * q.transpose())
}

/// Symmetric square root of a symmetric positive-definite 2×2 matrix.
pub fn sqrt_sym2(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    check_positive_definite2(m)?;
    let eig = SymmetricEigen::new(*m);
    let d = eig.eigenvalues.map(f64::sqrt);
    let q = eig.eigenvectors;
    Ok(q * Matrix2::from_diagonal(&d) * q.transpose())
}

/// Reciprocal condition estimate from the eigenvalues of a symmetric matrix.
pub fn rcond_sym(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let hi = abs.iter().cloned().fold(0.0, f64::max);
    let lo = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Solves a symmetric system, preferring Cholesky and falling back to LU.
/// Systems whose reciprocal condition number drops below `1e-14` are
/// reported as singular.
pub fn solve_symmetric(
    a: &DMatrix<f64>,
    rhs: &DVector<f64>,
    context: &'static str,
) -> Result<DVector<f64>> {
    let rcond = rcond_sym(a);
    if !(rcond > 1e-14) {
        return Err(Error::Singular { context, rcond });
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    a.clone()
        .lu()
        .solve(rhs)
        .ok_or(Error::Singular { context, rcond })
}

/// Inverse of a general square matrix with a singularity report.
pub fn inverse(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let rcond = rcond_general(a);
    if !(rcond > 1e-14) {
        return Err(Error::Singular { context, rcond });
    }
    a.clone()
        .try_inverse()
        .ok_or(Error::Singular { context, rcond })
}

/// Ratio of extreme singular values.
pub fn rcond_general(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let hi = sv.max();
    let lo = sv.min();
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Numerical rank with a relative singular-value cutoff.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let hi = sv.max();
    if hi == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * hi).count()
}

/// Orthonormal basis (columns) of the right null space of `a`.
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let ncols = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(ncols, ncols);
    }
    // Pad to at least square so the SVD returns a full V.
    let mut padded = DMatrix::zeros(a.nrows().max(ncols), ncols);
    padded.rows_mut(0, a.nrows()).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let hi = svd.singular_values.max();
    let cut = if hi == 0.0 { f64::INFINITY } else { rel_tol * hi };
    let cols: Vec<DVector<f64>> = (0..ncols)
        .filter(|&i| !(svd.singular_values[i] > cut) || hi == 0.0)
        .map(|i| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(ncols, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Natural log of the determinant of a symmetric positive-definite matrix.
pub fn log_det_spd(a: &DMatrix<f64>) -> Result<f64> {
    let chol = a.clone().cholesky().ok_or_else(|| {
        let eig = SymmetricEigen::new(a.clone());
        Error::NotPositiveDefinite {
            min_eig: eig.eigenvalues.min(),
            max_eig: eig.eigenvalues.max(),
        }
    })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}
