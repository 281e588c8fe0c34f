//! Symmetric vectorization and the symmetric Kronecker product.
//!
//! `svec` stacks the lower triangle of a symmetric matrix column by column,
//! scaling off-diagonal entries by √2 so that `tr(D G) = svec(D)ᵀ svec(G)`.
//! The symmetric Kronecker product `R₁ ⊗ₛ R₂` is the operator on svec-space
//! defined by
//!
//! ```text
//! (R₁ ⊗ₛ R₂) svec(G) = ½ svec(R₂ G R₁ᵀ + R₁ G R₂ᵀ)
//! ```
//!
//! for every symmetric `G`; it is the workhorse of the interior-point
//! Newton systems in [`crate::distributed`] and [`crate::sdp::solver`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum AlgebraError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("vector length {0} is not a triangular number")]
    BadLength(usize),
    #[error("size mismatch: {0}x{0} vs {1}x{1}")]
    SizeMismatch(usize, usize),
}

/// Length of `svec` of a `d × d` symmetric matrix.
pub fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Side length recovered from an svec length, if it is triangular.
pub fn svec_dim(len: usize) -> Option<usize> {
    // d(d+1)/2 = len  =>  d = (sqrt(8 len + 1) - 1) / 2
    let d = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (svec_len(d) == len).then_some(d)
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), AlgebraError> {
    if m.nrows() != m.ncols() {
        return Err(AlgebraError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let tol = 1e-12 * (1.0 + linalg::max_abs(m));
    let asym = linalg::asymmetry(m);
    if asym > tol {
        return Err(AlgebraError::NotSymmetric(asym));
    }
    Ok(())
}

/// Symmetric vectorization: diagonal entries unscaled, off-diagonals scaled
/// by √2, lower triangle in column-major order.
pub fn svec(m: &DMatrix<f64>) -> Result<DVector<f64>, AlgebraError> {
    check_symmetric(m)?;
    Ok(svec_unchecked(m))
}

/// `svec` without the symmetry check; reads the lower triangle only.
pub(crate) fn svec_unchecked(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut out = DVector::zeros(svec_len(d));
    let mut idx = 0;
    for j in 0..d {
        out[idx] = m[(j, j)];
        idx += 1;
        for i in (j + 1)..d {
            out[idx] = SQRT_2 * m[(i, j)];
            idx += 1;
        }
    }
    out
}

/// Inverse of [`svec`]: rebuild the symmetric matrix.
pub fn smat(v: &DVector<f64>) -> Result<DMatrix<f64>, AlgebraError> {
    let d = svec_dim(v.len()).ok_or(AlgebraError::BadLength(v.len()))?;
    let mut m = DMatrix::zeros(d, d);
    let mut idx = 0;
    for j in 0..d {
        m[(j, j)] = v[idx];
        idx += 1;
        for i in (j + 1)..d {
            let x = v[idx] / SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            idx += 1;
        }
    }
    Ok(m)
}

/// Symmetric Kronecker product as an explicit matrix on svec-space.
///
/// Columns are the images of the svec basis matrices, so the defining
/// identity holds by construction for every symmetric `G`.
pub fn sym_kron(r1: &DMatrix<f64>, r2: &DMatrix<f64>) -> Result<DMatrix<f64>, AlgebraError> {
    if r1.nrows() != r1.ncols() {
        return Err(AlgebraError::NotSquare {
            rows: r1.nrows(),
            cols: r1.ncols(),
        });
    }
    if r2.nrows() != r2.ncols() {
        return Err(AlgebraError::NotSquare {
            rows: r2.nrows(),
            cols: r2.ncols(),
        });
    }
    if r1.nrows() != r2.nrows() {
        return Err(AlgebraError::SizeMismatch(r1.nrows(), r2.nrows()));
    }
    let d = r1.nrows();
    let dd = svec_len(d);
    let mut out = DMatrix::zeros(dd, dd);
    let mut col = 0;
    let mut basis = DMatrix::zeros(d, d);
    for j in 0..d {
        for i in j..d {
            let scale = if i == j { 1.0 } else { 1.0 / SQRT_2 };
            basis[(i, j)] = scale;
            basis[(j, i)] = scale;
            let image = (r2 * &basis * r1.transpose() + r1 * &basis * r2.transpose()) * 0.5;
            out.set_column(col, &svec_unchecked(&linalg::symmetrize(&image)));
            basis[(i, j)] = 0.0;
            basis[(j, i)] = 0.0;
            col += 1;
        }
    }
    Ok(out)
}
