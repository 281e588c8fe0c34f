//! Classification of candidate new edges by the dual indicator
//! `δ = tr(E_new Φ₂*) - tr(E_new Φ₁*)`.
//!
//! - `δ = 0`: a negative-weight optimum of the augmented graph exists with
//!   the optimum value unchanged.
//! - `δ > 0`: every optimum of the augmented graph puts a negative weight on
//!   the new edge, and the optimum strictly improves.
//! - `δ < 0`: the new weight is positive and the optimum strictly improves.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::graph::WeightedGraph;
use crate::sdp::{assemble_problem, solve_sdp, SdpError, SdpSolution, SolverParams};

#[derive(Debug, Error)]
pub enum EdgeAnalysisError {
    #[error("edge ({0}, {1}) is already present")]
    EdgeAlreadyPresent(usize, usize),
    #[error("node index {index} out of range 1..={n}")]
    NodeOutOfRange { index: usize, n: usize },
    #[error("self-loop ({0}, {0}) is not a candidate edge")]
    SelfLoop(usize),
    #[error("zero_tol must be positive, got {0:.3e}")]
    BadTolerance(f64),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

/// Verdict of the indicator test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeVerdict {
    /// δ ≈ 0: some optimal realization of the augmented graph has a
    /// negative weight on the new edge, at unchanged optimum value.
    NegativeExists,
    /// δ > 0: the new edge weight must be negative; the optimum improves.
    NegativeRequired,
    /// δ < 0: the new edge weight must be positive; the optimum improves.
    PositiveRequired,
}

impl std::fmt::Display for EdgeVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EdgeVerdict::NegativeExists => "NEGATIVE_EXISTS",
            EdgeVerdict::NegativeRequired => "NEGATIVE_REQUIRED",
            EdgeVerdict::PositiveRequired => "POSITIVE_REQUIRED",
        };
        f.write_str(s)
    }
}

/// Outcome of classifying one candidate edge.
#[derive(Debug, Clone)]
pub struct EdgeClassification {
    pub indicator: f64,
    pub verdict: EdgeVerdict,
    pub zero_tol: f64,
    /// Which dual pair produced the indicator (certificates are not unique).
    pub dual_note: String,
}

/// `δ = tr(E Φ₂) - tr(E Φ₁)`; with the four nonzeros of `E` this reduces to
/// `([Φ₂]_ii + [Φ₂]_jj - 2[Φ₂]_ij) - ([Φ₁]_ii + [Φ₁]_jj - 2[Φ₁]_ij)`.
pub fn edge_indicator(
    phi1: &DMatrix<f64>,
    phi2: &DMatrix<f64>,
    edge: (usize, usize),
    n: usize,
) -> Result<f64, EdgeAnalysisError> {
    let (i, j) = edge;
    if i < 1 || j < 1 || i > n || j > n {
        return Err(EdgeAnalysisError::NodeOutOfRange { index: i.max(j), n });
    }
    if i == j {
        return Err(EdgeAnalysisError::SelfLoop(i));
    }
    let (a, b) = (i - 1, j - 1);
    let quad = |phi: &DMatrix<f64>| phi[(a, a)] + phi[(b, b)] - 2.0 * phi[(a, b)];
    Ok(quad(phi2) - quad(phi1))
}

/// Default indicator tolerance: `1e-6 · (tr Φ₁ + tr Φ₂)`.
pub fn default_zero_tol(phi1: &DMatrix<f64>, phi2: &DMatrix<f64>) -> f64 {
    1e-6 * (phi1.trace() + phi2.trace())
}

/// Map an indicator value to its verdict.
pub fn classify_edge(delta: f64, zero_tol: f64) -> Result<EdgeClassification, EdgeAnalysisError> {
    if !(zero_tol > 0.0) {
        return Err(EdgeAnalysisError::BadTolerance(zero_tol));
    }
    let verdict = if delta.abs() <= zero_tol {
        EdgeVerdict::NegativeExists
    } else if delta > 0.0 {
        EdgeVerdict::NegativeRequired
    } else {
        EdgeVerdict::PositiveRequired
    };
    Ok(EdgeClassification {
        indicator: delta,
        verdict,
        zero_tol,
        dual_note: "caller-provided certificates".into(),
    })
}

/// Classify a candidate edge against a solved program's dual pair.
pub fn analyze_edge(
    g: &WeightedGraph,
    sol: &SdpSolution,
    edge: (usize, usize),
) -> Result<EdgeClassification, EdgeAnalysisError> {
    let (i, j) = (edge.0.min(edge.1), edge.0.max(edge.1));
    if g.has_edge(i, j) {
        return Err(EdgeAnalysisError::EdgeAlreadyPresent(i, j));
    }
    let delta = edge_indicator(&sol.phi1, &sol.phi2, (i, j), g.n_nodes())?;
    let tol = default_zero_tol(&sol.phi1, &sol.phi2);
    let mut cls = classify_edge(delta, tol)?;
    cls.dual_note = format!(
        "dual pair from interior-point solve ({} iterations, gap {:.3e})",
        sol.iterations, sol.gap
    );
    Ok(cls)
}

/// Result of re-solving with the candidate edge added.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub edge: (usize, usize),
    pub verdict: EdgeVerdict,
    pub old_t_star: f64,
    pub new_t_star: f64,
    /// Weight the re-solve assigned to the new edge.
    pub new_edge_y: f64,
    /// Whether the theorem's stated consequence held.
    pub passed: bool,
    pub detail: String,
}

/// Re-solve on `g + edge` and check the consequence claimed by the verdict.
///
/// Under `NegativeExists` only the unchanged optimum is asserted: the
/// theorem guarantees existence of a negative-weight optimum, not that
/// every solver answer carries one.
pub fn verify_prediction(
    g: &WeightedGraph,
    edge: (usize, usize),
    cls: &EdgeClassification,
    params: &SolverParams,
) -> Result<VerificationReport, EdgeAnalysisError> {
    let old = solve_sdp(&assemble_problem(g)?, params)?;
    let augmented = g.with_added_edge(edge.0, edge.1).map_err(SdpError::from)?;
    let new = solve_sdp(&assemble_problem(&augmented)?, params)?;
    let new_idx = augmented
        .edges()
        .iter()
        .position(|&e| e == (edge.0.min(edge.1), edge.0.max(edge.1)))
        .expect("added edge present");
    let new_edge_y = new.y[new_idx];

    let (passed, detail) = match cls.verdict {
        EdgeVerdict::NegativeExists => {
            let ok = (new.t_star - old.t_star).abs() <= 1e-5;
            (
                ok,
                format!(
                    "optimum change |Δt| = {:.3e} (tolerance 1e-5); solver weight y_new = {:.6} \
                     (a negative-weight optimum exists but need not be the one returned)",
                    (new.t_star - old.t_star).abs(),
                    new_edge_y
                ),
            )
        }
        EdgeVerdict::NegativeRequired => {
            let ok = new_edge_y < 0.0 && new.t_star < old.t_star - 1e-7;
            (
                ok,
                format!(
                    "y_new = {:.6} (must be < 0), t: {:.6} -> {:.6} (must strictly drop)",
                    new_edge_y, old.t_star, new.t_star
                ),
            )
        }
        EdgeVerdict::PositiveRequired => {
            let ok = new_edge_y > 0.0 && new.t_star < old.t_star - 1e-7;
            (
                ok,
                format!(
                    "y_new = {:.6} (must be > 0), t: {:.6} -> {:.6} (must strictly drop)",
                    new_edge_y, old.t_star, new.t_star
                ),
            )
        }
    };
    Ok(VerificationReport {
        edge: (edge.0.min(edge.1), edge.0.max(edge.1)),
        verdict: cls.verdict,
        old_t_star: old.t_star,
        new_t_star: new.t_star,
        new_edge_y,
        passed,
        detail,
    })
}
