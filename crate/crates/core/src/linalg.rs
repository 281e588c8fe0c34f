//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Largest absolute entry of a matrix (zero for empty matrices).
pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, &x| acc.max(x.abs()))
}

/// Maximum entrywise asymmetry `max |M - Mᵀ|`.
pub(crate) fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(M + Mᵀ) / 2`.
pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, sorted ascending. Deterministic for
/// identical input.
pub(crate) fn symmetric_eigenvalues_sorted(m: &DMatrix<f64>) -> Vec<f64> {
    let se = symmetrize(m).symmetric_eigen();
    let mut vals: Vec<f64> = se.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Smallest eigenvalue of a symmetric matrix.
pub(crate) fn min_symmetric_eig(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues_sorted(m)[0]
}

/// Largest real part over the (complex) spectrum of a square matrix.
pub(crate) fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solve `A x = b` by LU with a singularity check.
pub(crate) fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().lu().solve(b)
}

/// Dense solve with row/column equilibration and iterative refinement.
/// Matrices mixing scales across many orders of magnitude (barrier systems)
/// lose several digits under a plain factorization; equilibrated refinement
/// recovers them.
pub(crate) fn solve_equilibrated(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let mut scaled = a.clone();
    let mut row_scale = vec![1.0f64; n];
    let mut col_scale = vec![1.0f64; a.ncols()];
    for _ in 0..2 {
        for i in 0..n {
            let nrm = scaled.row(i).norm().max(f64::MIN_POSITIVE);
            row_scale[i] /= nrm;
            let mut r = scaled.row_mut(i);
            r /= nrm;
        }
        for j in 0..a.ncols() {
            let nrm = scaled.column(j).norm().max(f64::MIN_POSITIVE);
            col_scale[j] /= nrm;
            let mut c = scaled.column_mut(j);
            c /= nrm;
        }
    }
    let b_scaled = DVector::from_fn(n, |i, _| b[i] * row_scale[i]);
    let lu = scaled.clone().lu();
    let mut z = lu.solve(&b_scaled)?;
    for _ in 0..2 {
        let r = &b_scaled - &scaled * &z;
        let d = lu.solve(&r)?;
        let before = r.norm();
        let after = (&b_scaled - &scaled * (&z + &d)).norm();
        if after < before {
            z += d;
        } else {
            break;
        }
    }
    Some(DVector::from_fn(a.ncols(), |j, _| z[j] * col_scale[j]))
}
