//! Edge-weight optimization as a semidefinite program.
//!
//! The eigenratio program over scaled weights `y_k = w_k/λ₂` (free sign) is
//!
//! ```text
//! minimize t   s.t.   I - y₀𝟙𝟙ᵀ ⪯ Σ_k y_k E_k ⪯ t·I,
//! ```
//!
//! whose dual pairs two PSD certificates Φ₁, Φ₂ with `tr(Φ₂) = 1`,
//! `tr(𝟙𝟙ᵀΦ₁) = 0`, and `tr(E_kΦ₂) = tr(E_kΦ₁)` on every edge; strong
//! duality gives `t* = tr(Φ₁*)`. The solver follows the central path of the
//! symmetrized complementarity `ΦS + SΦ = 2ρI` with one Newton step per
//! barrier level; it is the one-node specialization of the distributed
//! machinery in [`crate::distributed`].

pub mod algebra;
pub mod problem;
pub mod solver;

pub use algebra::{smat, svec, svec_len, sym_kron};
pub use problem::{
    assemble_problem, complete_graph_certificate, kkt_residuals, recover_weights,
    CompleteGraphCertificate, KktReport, ParamsFile, SdpProblem, SdpSolution, SolverParams,
    WeightRealization,
};
pub use solver::{solve_sdp, solve_sdp_nonneg, solve_sdp_with_start, NonnegOutcome, SdpStart};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("graph is not connected: the eigenratio program is infeasible")]
    Disconnected,
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error("edge weights are all zero")]
    ZeroWeights,
    #[error(
        "interior-point solve did not converge in {iterations} iterations \
         (max KKT violation {max_violation:.3e})"
    )]
    Convergence {
        iterations: usize,
        max_violation: f64,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("recovered realization misses the optimum: eigenratio {got:.9} vs t* {expected:.9}")]
    RealizationMismatch { expected: f64, got: f64 },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Algebra(#[from] algebra::AlgebraError),
    #[error(transparent)]
    Distributed(#[from] crate::distributed::DistributedError),
}
