//! Problem assembly, KKT certification, the closed-form complete-graph
//! certificate, and physical weight recovery.

use nalgebra::DMatrix;
use std::collections::BTreeMap;
use std::str::FromStr;

use super::SdpError;
use crate::graph::{edge_basis, spectrum, WeightedGraph};
use crate::linalg;

/// Assembled eigenratio program: edge basis matrices plus the block
/// constants of the standard dual form.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub n_nodes: usize,
    /// Edge basis matrices `E_k`, aligned with `graph.edges()`.
    pub basis: Vec<DMatrix<f64>>,
    /// `Î = diag(I_N, 0)` (2N×2N).
    pub i_hat: DMatrix<f64>,
    /// `Ĩ = diag(0, I_N)`.
    pub i_tilde: DMatrix<f64>,
    /// `𝟙̂ = diag(𝟙𝟙ᵀ, 0)`.
    pub ones_hat: DMatrix<f64>,
    /// The underlying topology.
    pub graph: WeightedGraph,
}

/// Build the program from a connected topology.
pub fn assemble_problem(g: &WeightedGraph) -> Result<SdpProblem, SdpError> {
    if !g.is_connected() {
        return Err(SdpError::Disconnected);
    }
    let n = g.n_nodes();
    let two_n = 2 * n;
    let basis: Result<Vec<_>, _> = g.edges().iter().map(|&e| edge_basis(e, n)).collect();
    let basis = basis?;
    let mut i_hat = DMatrix::zeros(two_n, two_n);
    let mut i_tilde = DMatrix::zeros(two_n, two_n);
    let mut ones_hat = DMatrix::zeros(two_n, two_n);
    for i in 0..n {
        i_hat[(i, i)] = 1.0;
        i_tilde[(n + i, n + i)] = 1.0;
        for j in 0..n {
            ones_hat[(i, j)] = 1.0;
        }
    }
    Ok(SdpProblem {
        n_nodes: n,
        basis,
        i_hat,
        i_tilde,
        ones_hat,
        graph: g.topology(),
    })
}

/// Interior-point parameters. Defaults match the reference experiment
/// (ρ₀ = 1e4, θ = 0.1, ε = 1e-13).
#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    pub rho0: f64,
    pub theta: f64,
    pub eps: f64,
    pub tau: f64,
    pub max_iters: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            rho0: 1e4,
            theta: 0.1,
            eps: 1e-13,
            tau: 0.98,
            max_iters: 500,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), SdpError> {
        let bad = |m: &str| Err(SdpError::BadParams(m.into()));
        if !(self.rho0 > 0.0) {
            return bad("rho0 must be positive");
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad("theta must lie in (0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be nonzero");
        }
        Ok(())
    }

    pub fn from_params_file(file: &ParamsFile) -> Result<Self, SdpError> {
        let mut p = Self::default();
        if let Some(v) = file.get("rho0") {
            p.rho0 = v;
        }
        if let Some(v) = file.get("theta") {
            p.theta = v;
        }
        if let Some(v) = file.get("eps") {
            p.eps = v;
        }
        if let Some(v) = file.get("tau") {
            p.tau = v;
        }
        if let Some(v) = file.get("max_iters") {
            p.max_iters = v as usize;
        }
        p.validate()?;
        Ok(p)
    }
}

impl FromStr for SolverParams {
    type Err = SdpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_params_file(&s.parse()?)
    }
}

/// Keys accepted in a `key=value` parameter file (solver plus distributed
/// extensions; each consumer picks the ones it needs).
pub const PARAM_KEYS: [&str; 11] = [
    "rho0",
    "theta",
    "eps",
    "tau",
    "max_iters",
    "m0",
    "xi",
    "tol",
    "lin_tol",
    "lin_rounds_per_node",
    "max_outer",
];

/// Parsed `key=value` parameter file. `#` starts a comment.
#[derive(Debug, Clone, Default)]
pub struct ParamsFile {
    values: BTreeMap<String, f64>,
}

impl ParamsFile {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

impl FromStr for ParamsFile {
    type Err = SdpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line.split_once('=').ok_or_else(|| {
                SdpError::BadParams(format!("line {}: expected key=value", lineno + 1))
            })?;
            let key = key.trim();
            if !PARAM_KEYS.contains(&key) {
                return Err(SdpError::BadParams(format!(
                    "line {}: unknown key `{key}`",
                    lineno + 1
                )));
            }
            let val: f64 = val.trim().parse().map_err(|e| {
                SdpError::BadParams(format!("line {}: bad value for `{key}`: {e}", lineno + 1))
            })?;
            values.insert(key.to_string(), val);
        }
        Ok(Self { values })
    }
}

/// Solver output: optimum, scaled weights, and the dual certificates.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub t_star: f64,
    /// Scaled edge weights `y_k`, aligned with the problem's edge list.
    pub y: Vec<f64>,
    /// Shift multiplier (not unique; reported, never asserted on).
    pub y0: f64,
    pub phi1: DMatrix<f64>,
    pub phi2: DMatrix<f64>,
    /// `|t* - tr(Φ₁)|` at exit.
    pub gap: f64,
    pub iterations: usize,
}

/// Per-condition KKT violation report.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// `|tr(Φ₂) - 1|`.
    pub dual_trace: f64,
    /// `|tr(𝟙𝟙ᵀΦ₁)|`.
    pub dual_ones: f64,
    /// `max_k |tr(E_kΦ₂) - tr(E_kΦ₁)|`.
    pub dual_edge_max: f64,
    /// Negative part of λ_min(Φ₁).
    pub phi1_neg: f64,
    /// Negative part of λ_min(Φ₂).
    pub phi2_neg: f64,
    /// `|tr(Φ₁) - Σ y_k tr(E_kΦ₁)|`.
    pub stationarity_phi1: f64,
    /// `|t - Σ y_k tr(E_kΦ₂)|`.
    pub stationarity_t: f64,
    /// `|tr[(I - y₀𝟙𝟙ᵀ - Σ y_kE_k) Φ₁]|`.
    pub compl_slack1: f64,
    /// `|tr[(Σ y_kE_k - tI) Φ₂]|`.
    pub compl_slack2: f64,
    /// λ_min of the lower primal slack `Σ y_kE_k + y₀𝟙𝟙ᵀ - I`.
    pub primal_min_eig1: f64,
    /// λ_min of the upper primal slack `tI - Σ y_kE_k`.
    pub primal_min_eig2: f64,
    /// `|t - tr(Φ₁)|`.
    pub gap: f64,
}

impl KktReport {
    /// Worst violation across all conditions (negative primal/dual
    /// eigenvalues count by their magnitude).
    pub fn max_violation(&self) -> f64 {
        [
            self.dual_trace,
            self.dual_ones,
            self.dual_edge_max,
            self.phi1_neg,
            self.phi2_neg,
            self.stationarity_phi1,
            self.stationarity_t,
            self.compl_slack1,
            self.compl_slack2,
            (-self.primal_min_eig1).max(0.0),
            (-self.primal_min_eig2).max(0.0),
            self.gap,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn lines(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("dual_trace", self.dual_trace),
            ("dual_ones", self.dual_ones),
            ("dual_edge_max", self.dual_edge_max),
            ("phi1_neg", self.phi1_neg),
            ("phi2_neg", self.phi2_neg),
            ("stationarity_phi1", self.stationarity_phi1),
            ("stationarity_t", self.stationarity_t),
            ("compl_slack1", self.compl_slack1),
            ("compl_slack2", self.compl_slack2),
            ("primal_min_eig1", self.primal_min_eig1),
            ("primal_min_eig2", self.primal_min_eig2),
            ("gap", self.gap),
        ]
    }
}

/// Evaluate every KKT condition of a candidate solution.
pub fn kkt_residuals(sol: &SdpSolution, p: &SdpProblem) -> KktReport {
    let n = p.n_nodes;
    let phi1 = &sol.phi1;
    let phi2 = &sol.phi2;
    let ones = DMatrix::from_element(n, n, 1.0);

    let mut l_y = DMatrix::zeros(n, n);
    for (k, e) in p.basis.iter().enumerate() {
        l_y += e * sol.y[k];
    }

    let dual_trace = (phi2.trace() - 1.0).abs();
    let dual_ones = (&ones * phi1).trace().abs();
    let mut dual_edge_max = 0.0f64;
    let mut stat1 = 0.0;
    let mut stat2 = 0.0;
    for (k, e) in p.basis.iter().enumerate() {
        let t1 = (e * phi1).trace();
        let t2 = (e * phi2).trace();
        dual_edge_max = dual_edge_max.max((t2 - t1).abs());
        stat1 += sol.y[k] * t1;
        stat2 += sol.y[k] * t2;
    }
    let stationarity_phi1 = (phi1.trace() - stat1).abs();
    let stationarity_t = (sol.t_star - stat2).abs();

    let slack1 = &l_y + &ones * sol.y0 - DMatrix::identity(n, n);
    let slack2 = DMatrix::identity(n, n) * sol.t_star - &l_y;
    let compl_slack1 = (&slack1 * phi1).trace().abs();
    let compl_slack2 = (&slack2 * phi2).trace().abs();

    KktReport {
        dual_trace,
        dual_ones,
        dual_edge_max,
        phi1_neg: (-linalg::min_symmetric_eig(phi1)).max(0.0),
        phi2_neg: (-linalg::min_symmetric_eig(phi2)).max(0.0),
        stationarity_phi1,
        stationarity_t,
        compl_slack1,
        compl_slack2,
        primal_min_eig1: linalg::min_symmetric_eig(&slack1),
        primal_min_eig2: linalg::min_symmetric_eig(&slack2),
        gap: (sol.t_star - phi1.trace()).abs(),
    }
}

/// Closed-form optimum of the complete graph: equal weights `1/N`, `t = 1`,
/// and identical dual certificates with diagonal `1/N` and off-diagonal
/// `-1/(N(N-1))`.
#[derive(Debug, Clone)]
pub struct CompleteGraphCertificate {
    pub y: Vec<f64>,
    pub y0: f64,
    pub t: f64,
    pub phi1: DMatrix<f64>,
    pub phi2: DMatrix<f64>,
}

impl CompleteGraphCertificate {
    /// View as a solution record for [`kkt_residuals`].
    pub fn to_solution(&self) -> SdpSolution {
        SdpSolution {
            t_star: self.t,
            y: self.y.clone(),
            y0: self.y0,
            phi1: self.phi1.clone(),
            phi2: self.phi2.clone(),
            gap: 0.0,
            iterations: 0,
        }
    }
}

/// Certificate for `K_n`, `n ≥ 2`.
pub fn complete_graph_certificate(n: usize) -> CompleteGraphCertificate {
    assert!(n >= 2, "complete graph needs at least 2 nodes");
    let nf = n as f64;
    let off = -1.0 / (nf * (nf - 1.0));
    let phi = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / nf } else { off });
    CompleteGraphCertificate {
        y: vec![1.0 / nf; n * (n - 1) / 2],
        y0: 1.0 / nf,
        t: 1.0,
        phi1: phi.clone(),
        phi2: phi,
    }
}

/// Physical weight realization recovered from scaled weights.
#[derive(Debug, Clone)]
pub struct WeightRealization {
    /// Unit-energy weights (`Σ w_k² = 1`).
    pub w: Vec<f64>,
    pub lambda2: f64,
    pub lambda_n: f64,
}

/// Normalize `y` to the unit-energy weights `w = y/‖y‖₂` and verify that
/// the realized Laplacian reproduces the optimum eigenratio.
pub fn recover_weights(sol: &SdpSolution, p: &SdpProblem) -> Result<WeightRealization, SdpError> {
    let norm: f64 = sol.y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(SdpError::ZeroWeights);
    }
    let w: Vec<f64> = sol.y.iter().map(|v| v / norm).collect();
    let lambda2 = 1.0 / norm;
    let lambda_n = sol.t_star / norm;
    let realized = p.graph.reweighted(w.clone())?;
    let summary = spectrum(&realized.laplacian())?;
    let ratio = summary
        .synchronizability
        .ok_or_else(|| SdpError::Numerical("realized Laplacian has λ₂ ≤ 0".into()))?;
    if (ratio - sol.t_star).abs() > 1e-6 {
        return Err(SdpError::RealizationMismatch {
            expected: sol.t_star,
            got: ratio,
        });
    }
    Ok(WeightRealization {
        w,
        lambda2,
        lambda_n,
    })
}
