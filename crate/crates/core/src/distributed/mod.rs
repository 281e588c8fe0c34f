//! Per-node primal-dual interior-point machinery for regular graphs.
//!
//! Each node holds a copy `Φ⁽ⁱ⁾ = diag(Φ₁⁽ⁱ⁾, Φ₂⁽ⁱ⁾)` of the dual variable
//! restricted to its local feasible set Ω_i (trace and incident-edge
//! constraints only), plus a dual slack `S⁽ⁱ⁾` and multipliers for the local
//! constraints. Consensus between copies is driven by a quadratic penalty of
//! weight `M` on neighbor disagreement; an outer loop escalates `M`
//! (sequential unconstrained minimization) with warm starts.
//!
//! Every inner iteration is one Newton step on the perturbed KKT system with
//! the symmetrized complementarity `ΦS + SΦ = 2ρI`. The slack directions are
//! Gauss-eliminated, each node keeps one row block of the reduced system,
//! and a projection-consensus iteration solves the stacked linear system so
//! that every node recovers the full Newton direction. Step lengths are
//! agreed on by min-consensus.
//!
//! The centralized solver in [`crate::sdp::solver`] is the one-node
//! specialization of the same machinery (one "supernode" holding every
//! constraint, no penalty term).

mod linsolve;
mod newton;
mod runner;

pub use linsolve::{
    distributed_linear_solve, flooded_linear_solve, min_consensus_alpha, LinearSolveOutcome,
};
pub use newton::{
    assemble_node_newton, eliminate_slack, full_constraint_set, local_feasible_projectables,
    local_step_length, max_psd_step, newton_residual, ConstraintSet, NewtonRowBlock,
    NodeNewtonSystem, NodeState, SlackBackSub,
};
pub use runner::{run_distributed, DistributedParams, DistributedRunReport, RunLogRow};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DistributedError {
    #[error("graph is not connected")]
    NotConnected,
    #[error("graph is not regular: distributed mode needs equal node degrees")]
    NotRegular,
    #[error("node {0} out of range")]
    BadNode(usize),
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error("iterate {0} lost positive definiteness")]
    SingularIterate(&'static str),
    #[error(
        "consensus linear solve stalled after {rounds} rounds (relative residual {residual:.3e})"
    )]
    LinearSolveDiverged { rounds: usize, residual: f64 },
    #[error("inner loop diverged at outer round {outer}: {detail}")]
    InnerDiverged { outer: usize, detail: String },
    #[error("consensus not reached after {outer} outer rounds (residual {residual:.3e})")]
    ConsensusNotReached { outer: usize, residual: f64 },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Algebra(#[from] crate::sdp::algebra::AlgebraError),
}
