//! Stabilizing Riccati solutions, Lyapunov solves, and per-mode energy
//! blocks.
//!
//! The control gain `K = -(1/λ₂) Bᵀ P` is built from the unique positive
//! semidefinite stabilizing solution of
//!
//! ```text
//! Aᵀ P + P A - P B Bᵀ P = -Q,      Q ⪰ 0.
//! ```
//!
//! With eigenratio σ_i = λ_i/λ₂ of the weighted Laplacian, the exact control
//! energy decomposes over blocks H_i solving
//!
//! ```text
//! (A - σ_i B Bᵀ P)ᵀ H_i + H_i (A - σ_i B Bᵀ P) = -σ_i² P B Bᵀ P,
//! ```
//!
//! and each block is sandwiched as `P₀ ⪯ H_i ⪯ σ_i²/(2σ_i - 1) P` (equality
//! of the two ends at Q = 0, complete topology).
//!
//! # System file format
//!
//! Whitespace-separated decimal rows; sections separated by blank lines, in
//! order A, then B, then optionally Q. `#` starts a comment.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::linalg;

/// Spectral-abscissa threshold below which a closed loop counts as Hurwitz.
pub const HURWITZ_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RiccatiError {
    #[error("A must be square, got {0}x{1}")]
    BadStateMatrix(usize, usize),
    #[error("B must have {expected} rows, got {got}")]
    BadInputMatrix { expected: usize, got: usize },
    #[error("Q must be symmetric {n}x{n} with min eigenvalue >= -1e-9, got min {min:.3e}")]
    BadWeightMatrix { n: usize, min: f64 },
    #[error("A has an eigenvalue within 1e-9 of the imaginary axis (Re = {0:.3e})")]
    ImaginaryAxisEigenvalue(f64),
    #[error("(A, B) is not stabilizable: PBH test fails at eigenvalue {re:.4}+{im:.4}i")]
    NotStabilizable { re: f64, im: f64 },
    #[error("no stabilizing solution: sign iteration failed to converge")]
    NoStabilizingSolution,
    #[error("stabilizing solution check failed: {0}")]
    SolutionCheck(String),
    #[error("lambda2 must be positive (graph connected), got {0:.3e}")]
    NonPositiveLambda2(f64),
    #[error("closed-loop matrix is not Hurwitz (spectral abscissa {0:.3e})")]
    NotHurwitz(f64),
    #[error("W must be symmetric PSD, got min eigenvalue {0:.3e}")]
    NotPsdRhs(f64),
    #[error("sigma[{index}] = {value:.6} violates sigma >= 1")]
    SigmaBelowOne { index: usize, value: f64 },
    #[error("closed loop unstable for sigma[{index}] = {value:.6}")]
    ClosedLoopUnstable { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("system file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Agent dynamics `ẋ = A x + B u` plus the Riccati weight `Q`.
#[derive(Debug, Clone)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl SystemModel {
    /// Validates dimensions, the imaginary-axis margin of A, stabilizability
    /// of (A, B) via the PBH test, and Q ⪰ -1e-9·I. `None` Q means Q = 0.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: Option<DMatrix<f64>>,
    ) -> Result<Self, RiccatiError> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(RiccatiError::BadStateMatrix(a.nrows(), a.ncols()));
        }
        let n = a.nrows();
        if b.nrows() != n || b.ncols() == 0 {
            return Err(RiccatiError::BadInputMatrix {
                expected: n,
                got: b.nrows(),
            });
        }
        let q = q.unwrap_or_else(|| DMatrix::zeros(n, n));
        if q.nrows() != n || q.ncols() != n {
            return Err(RiccatiError::BadWeightMatrix { n, min: f64::NAN });
        }
        let q = linalg::symmetrize(&q);
        let qmin = linalg::min_symmetric_eig(&q);
        if qmin < -1e-9 {
            return Err(RiccatiError::BadWeightMatrix { n, min: qmin });
        }

        let eigs = a.complex_eigenvalues();
        for l in eigs.iter() {
            if l.re.abs() < 1e-9 {
                return Err(RiccatiError::ImaginaryAxisEigenvalue(l.re));
            }
        }
        for l in eigs.iter() {
            if l.re > 0.0 {
                pbh_controllable(&a, &b, *l)?;
            }
        }
        Ok(Self { a, b, q })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Same (A, B) with a different Q.
    pub fn with_q(&self, q: DMatrix<f64>) -> Result<Self, RiccatiError> {
        Self::new(self.a.clone(), self.b.clone(), Some(q))
    }

    /// Parse the system file format (sections A, B, optional Q).
    pub fn from_file_str(s: &str) -> Result<Self, RiccatiError> {
        let sections = parse_sections(s)?;
        match sections.len() {
            2 | 3 => {}
            got => {
                return Err(RiccatiError::Parse {
                    line: 0,
                    msg: format!("expected 2 or 3 matrix sections (A, B[, Q]), got {got}"),
                })
            }
        }
        let a = sections[0].clone();
        let b = sections[1].clone();
        let q = sections.get(2).cloned();
        Self::new(a, b, q)
    }

    pub fn to_file_string(&self) -> String {
        let fmt = |m: &DMatrix<f64>| {
            let mut s = String::new();
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols())
                    .map(|j| format!("{:.16e}", m[(i, j)]))
                    .collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
            s
        };
        format!("{}\n{}\n{}", fmt(&self.a), fmt(&self.b), fmt(&self.q))
    }
}

fn parse_sections(s: &str) -> Result<Vec<DMatrix<f64>>, RiccatiError> {
    let mut sections: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in s.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            if !current.is_empty() {
                sections.push(std::mem::take(&mut current));
            }
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let row = row.map_err(|e| RiccatiError::Parse {
            line: lineno + 1,
            msg: format!("bad number: {e}"),
        })?;
        if let Some(first) = current.first() {
            if first.len() != row.len() {
                return Err(RiccatiError::Parse {
                    line: lineno + 1,
                    msg: format!("ragged row: expected {} columns", first.len()),
                });
            }
        }
        current.push(row);
    }
    if !current.is_empty() {
        sections.push(current);
    }
    sections
        .into_iter()
        .map(|rows| {
            let nr = rows.len();
            let nc = rows[0].len();
            Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
        })
        .collect()
}

/// PBH rank test at one eigenvalue: `[A - λI, B]` must have full row rank.
fn pbh_controllable(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    lambda: Complex<f64>,
) -> Result<(), RiccatiError> {
    let n = a.nrows();
    let m = b.ncols();
    let mut pencil = DMatrix::<Complex<f64>>::zeros(n, n + m);
    for i in 0..n {
        for j in 0..n {
            pencil[(i, j)] = Complex::new(a[(i, j)], 0.0);
        }
        pencil[(i, i)] -= lambda;
        for j in 0..m {
            pencil[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
        }
    }
    let svals = pencil.svd(false, false).singular_values;
    let scale = 1.0 + linalg::max_abs(a) + linalg::max_abs(b) + lambda.norm();
    let min = svals.iter().fold(f64::INFINITY, |acc, &s| acc.min(s));
    if min <= 1e-9 * scale {
        return Err(RiccatiError::NotStabilizable {
            re: lambda.re,
            im: lambda.im,
        });
    }
    Ok(())
}

/// Synthesized controller: Riccati solution, gain, and the λ₂ it was scaled
/// by.
#[derive(Debug, Clone)]
pub struct ControllerSpec {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub lambda2: f64,
}

/// Solve the stabilizing ARE by the matrix sign function of the 2n×2n
/// Hamiltonian, refined with Newton–Kleinman steps until the residual
/// settles.
pub fn solve_are(sys: &SystemModel) -> Result<DMatrix<f64>, RiccatiError> {
    let n = sys.state_dim();
    let a = &sys.a;
    let bbt = &sys.b * sys.b.transpose();

    // Hamiltonian [[A, -BBᵀ], [-Q, -Aᵀ]].
    let mut ham = DMatrix::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(a);
    ham.view_mut((0, n), (n, n)).copy_from(&(-&bbt));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-&sys.q));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let sign = matrix_sign(&ham).ok_or(RiccatiError::NoStabilizingSolution)?;

    // Stable invariant subspace = range of (I - sign)/2.
    let proj = (DMatrix::identity(2 * n, 2 * n) - &sign) * 0.5;
    let svd = proj.svd(true, false);
    let u = svd.u.as_ref().expect("svd with u");
    let sv = &svd.singular_values;
    if sv[n - 1] < 0.5 || (2 * n > n && sv.len() > n && sv[n] > 0.5) {
        return Err(RiccatiError::SolutionCheck(format!(
            "stable subspace has ambiguous rank: sv[{}]={:.3e}, sv[{}]={:.3e}",
            n - 1,
            sv[n - 1],
            n,
            sv.get(n).copied().unwrap_or(0.0)
        )));
    }
    let u1 = u.view((0, 0), (n, n)).into_owned();
    let u2 = u.view((n, 0), (n, n)).into_owned();
    let u1_lu = u1.transpose().lu();
    let p_t = u1_lu
        .solve(&u2.transpose())
        .ok_or_else(|| RiccatiError::SolutionCheck("singular U1 block".into()))?;
    let mut p = linalg::symmetrize(&p_t.transpose());

    // Newton–Kleinman refinement.
    let res_norm =
        |p: &DMatrix<f64>| -> f64 { (a.transpose() * p + p * a - p * &bbt * p + &sys.q).norm() };
    let target = |p: &DMatrix<f64>| 1e-12 * (1.0 + p.norm_squared());
    for _ in 0..30 {
        if res_norm(&p) <= target(&p) {
            break;
        }
        let acl = a - &bbt * &p;
        if linalg::spectral_abscissa(&acl) >= 0.0 {
            return Err(RiccatiError::NoStabilizingSolution);
        }
        let rhs = &sys.q + &p * &bbt * &p;
        let next = lyapunov_kron(&acl, &rhs).ok_or_else(|| {
            RiccatiError::SolutionCheck("refinement Lyapunov solve failed".into())
        })?;
        if (&next - &p).norm() <= 1e-16 * (1.0 + p.norm()) {
            p = next;
            break;
        }
        p = next;
    }

    let scale = 1.0 + p.norm();
    let pmin = linalg::min_symmetric_eig(&p);
    if pmin < -1e-8 * scale {
        return Err(RiccatiError::SolutionCheck(format!(
            "solution not PSD: min eigenvalue {pmin:.3e}"
        )));
    }
    let abscissa = linalg::spectral_abscissa(&(a - &bbt * &p));
    if abscissa >= -HURWITZ_TOL {
        return Err(RiccatiError::SolutionCheck(format!(
            "closed loop not Hurwitz: abscissa {abscissa:.3e}"
        )));
    }
    let res = res_norm(&p);
    if res > 1e-8 * (1.0 + p.norm_squared()) {
        return Err(RiccatiError::SolutionCheck(format!(
            "residual {res:.3e} above tolerance"
        )));
    }
    Ok(p)
}

/// Newton sign iteration with determinant scaling. `None` when the spectrum
/// touches the imaginary axis (no convergence).
fn matrix_sign(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let dim = m.nrows();
    let mut z = m.clone();
    for _ in 0..100 {
        let lu = z.clone().lu();
        let det: f64 = lu.determinant();
        if !det.is_finite() || det == 0.0 {
            return None;
        }
        let mu = det.abs().powf(-1.0 / dim as f64);
        let z_scaled = &z * mu;
        let inv = z_scaled.clone().try_inverse()?;
        let next = (&z_scaled + &inv) * 0.5;
        let step = (&next - &z).norm();
        let done = step <= 1e-14 * (1.0 + z.norm());
        z = next;
        if !z.iter().all(|x| x.is_finite()) {
            return None;
        }
        if done {
            return Some(z);
        }
    }
    None
}

/// Control gain `K = -(1/λ₂) Bᵀ P`.
pub fn control_gain(
    p: &DMatrix<f64>,
    b: &DMatrix<f64>,
    lambda2: f64,
) -> Result<DMatrix<f64>, RiccatiError> {
    if lambda2 <= 0.0 {
        return Err(RiccatiError::NonPositiveLambda2(lambda2));
    }
    Ok(b.transpose() * p * (-1.0 / lambda2))
}

/// Solve the ARE and form the gain in one step.
pub fn synthesize_controller(
    sys: &SystemModel,
    lambda2: f64,
) -> Result<ControllerSpec, RiccatiError> {
    let p = solve_are(sys)?;
    let k = control_gain(&p, &sys.b, lambda2)?;
    Ok(ControllerSpec { p, k, lambda2 })
}

/// Solve `Aclᵀ H + H Acl = -W` for Hurwitz `Acl` and PSD `W`.
pub fn solve_lyapunov(acl: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
    let abscissa = linalg::spectral_abscissa(acl);
    if abscissa >= -HURWITZ_TOL {
        return Err(RiccatiError::NotHurwitz(abscissa));
    }
    let wmin = linalg::min_symmetric_eig(w);
    if wmin < -1e-9 * (1.0 + linalg::max_abs(w)) {
        return Err(RiccatiError::NotPsdRhs(wmin));
    }
    let h = lyapunov_kron(acl, w)
        .ok_or_else(|| RiccatiError::SolutionCheck("Lyapunov system singular".into()))?;
    let res = (acl.transpose() * &h + &h * acl + w).norm();
    if res > 1e-8 * (1.0 + h.norm()) {
        return Err(RiccatiError::SolutionCheck(format!(
            "Lyapunov residual {res:.3e}"
        )));
    }
    let hmin = linalg::min_symmetric_eig(&h);
    if hmin < -1e-8 * (1.0 + h.norm()) {
        return Err(RiccatiError::SolutionCheck(format!(
            "Lyapunov solution not PSD: min eigenvalue {hmin:.3e}"
        )));
    }
    Ok(h)
}

/// Kronecker linearization of `Aᵀ H + H A = -W`: solve
/// `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(H) = -vec(W)`.
fn lyapunov_kron(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let at = a.transpose();
    let eye = DMatrix::identity(n, n);
    let big = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, w.iter().map(|&x| -x));
    let sol = linalg::lu_solve(&big, &rhs)?;
    let h = DMatrix::from_iterator(n, n, sol.iter().copied());
    Some(linalg::symmetrize(&h))
}

/// Per-mode energy blocks `H_i` for the eigenratios `σ_i = λ_i/λ₂`.
#[derive(Debug, Clone)]
pub struct EnergyBlocks {
    pub sigmas: Vec<f64>,
    pub blocks: Vec<DMatrix<f64>>,
}

impl EnergyBlocks {
    /// Exact control energy `J = Σ_i x̂₀ᵢᵀ H_i x̂₀ᵢ` for a stacked
    /// per-mode initial value of length `n·(number of modes)`.
    pub fn cost(&self, xhat0: &DVector<f64>) -> Result<f64, RiccatiError> {
        energy_cost(self, xhat0)
    }
}

/// Solve the per-mode Lyapunov equations
/// `(A - σ_i B Bᵀ P)ᵀ H_i + H_i (A - σ_i B Bᵀ P) = -σ_i² P B Bᵀ P`.
pub fn energy_blocks(
    sys: &SystemModel,
    p: &DMatrix<f64>,
    sigmas: &[f64],
) -> Result<EnergyBlocks, RiccatiError> {
    let bbt = &sys.b * sys.b.transpose();
    let pbbtp = p * &bbt * p;
    let mut blocks = Vec::with_capacity(sigmas.len());
    for (idx, &sigma) in sigmas.iter().enumerate() {
        if sigma < 1.0 - 1e-9 {
            return Err(RiccatiError::SigmaBelowOne {
                index: idx,
                value: sigma,
            });
        }
        let acl = &sys.a - &bbt * p * sigma;
        if linalg::spectral_abscissa(&acl) >= -HURWITZ_TOL {
            return Err(RiccatiError::ClosedLoopUnstable {
                index: idx,
                value: sigma,
            });
        }
        let h = solve_lyapunov(&acl, &(&pbbtp * (sigma * sigma)))?;
        blocks.push(h);
    }
    Ok(EnergyBlocks {
        sigmas: sigmas.to_vec(),
        blocks,
    })
}

/// `J = Σ_i x̂₀ᵢᵀ H_i x̂₀ᵢ ≥ 0`.
pub fn energy_cost(blocks: &EnergyBlocks, xhat0: &DVector<f64>) -> Result<f64, RiccatiError> {
    if blocks.blocks.is_empty() {
        return Ok(0.0);
    }
    let n = blocks.blocks[0].nrows();
    let expected = n * blocks.blocks.len();
    if xhat0.len() != expected {
        return Err(RiccatiError::DimensionMismatch {
            expected,
            got: xhat0.len(),
        });
    }
    let mut j = 0.0;
    for (i, h) in blocks.blocks.iter().enumerate() {
        let chunk = xhat0.rows(i * n, n);
        j += (chunk.transpose() * h * chunk)[(0, 0)];
    }
    Ok(j.max(0.0))
}
