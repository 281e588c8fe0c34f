//! Synthesis of energy-aware consensus controllers for identical linear
//! agents coupled over a weighted undirected graph.
//!
//! The toolkit covers the full pipeline:
//!
//! - [`graph`] — weighted graphs, Laplacians, spectral summaries, and the
//!   on-disk graph format.
//! - [`riccati`] — stabilizing solutions of the continuous algebraic Riccati
//!   equation, Lyapunov solves, and the per-mode energy blocks that bound the
//!   closed-loop control cost.
//! - [`sdp`] — edge-weight optimization: minimizing the Laplacian eigenratio
//!   λ_N/λ₂ as a semidefinite program with a primal-dual interior-point
//!   solver, KKT certification, and physical weight recovery.
//! - [`edge_analysis`] — dual-certificate classification of candidate new
//!   edges (when does an optimal weight turn negative?).
//! - [`distributed`] — a per-node interior-point method for regular graphs:
//!   local Newton blocks, consensus linear solves, and step-length
//!   propagation.
//! - [`simulate`] — closed-loop multi-agent simulation and numeric energy
//!   measurement cross-checking the analytic cost.

pub mod distributed;
pub mod edge_analysis;
pub mod graph;
mod linalg;
pub mod riccati;
pub mod sdp;
pub mod simulate;
