//! The outer/inner loop of the distributed interior-point run.
//!
//! Inner loop (fixed penalty M): one Newton step per barrier level,
//! `ρ ← ρθ` until `ρ ≤ ε`. Outer loop: if the node copies still disagree
//! beyond `tol`, escalate `M ← Mξ` and warm-start from the current
//! iterates.

use nalgebra::DMatrix;
use std::collections::BTreeMap;

use super::linsolve::{flooded_linear_solve, min_consensus_alpha};
use super::newton::{
    assemble_node_newton, eliminate_slack, local_feasible_projectables, local_step_length,
    ConstraintSet, NodeState,
};
use super::DistributedError;
use crate::graph::WeightedGraph;
use crate::sdp::algebra::smat;

/// Parameters of the distributed run. Defaults follow the reference
/// four-node ring experiment.
#[derive(Debug, Clone)]
pub struct DistributedParams {
    /// Initial consensus penalty M₀.
    pub m0: f64,
    /// Barrier floor ε ending each inner loop.
    pub eps: f64,
    /// Barrier decay θ ∈ (0, 1).
    pub theta: f64,
    /// Initial barrier parameter ρ₀.
    pub rho0: f64,
    /// Penalty growth ξ > 1 between outer rounds.
    pub xi: f64,
    /// Consensus tolerance on `max ‖Φ⁽ⁱ⁾ - Φ⁽ʲ⁾‖_F`.
    pub tol: f64,
    /// Fraction-to-boundary damping τ ∈ (0, 1].
    pub tau: f64,
    /// Inner-loop exit level: once every node's Newton residual and the
    /// complementarity measure sit below this, further barrier decay only
    /// degrades the iterates numerically.
    pub inner_tol: f64,
    /// Relative-residual target of the consensus linear solve.
    pub lin_tol: f64,
    /// Round cap of the consensus linear solve, per network node.
    pub lin_rounds_per_node: usize,
    /// Cap on outer (penalty) rounds.
    pub max_outer: usize,
}

impl Default for DistributedParams {
    fn default() -> Self {
        Self {
            m0: 500.0,
            eps: 1e-13,
            theta: 0.1,
            rho0: 1e4,
            xi: 2.0,
            tol: 2e-4,
            tau: 0.98,
            inner_tol: 1e-6,
            lin_tol: 1e-4,
            lin_rounds_per_node: 5000,
            max_outer: 12,
        }
    }
}

impl DistributedParams {
    pub fn validate(&self) -> Result<(), DistributedError> {
        let bad = |msg: &str| Err(DistributedError::BadParams(msg.into()));
        if !(self.m0 > 0.0) {
            return bad("m0 must be positive");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad("theta must lie in (0, 1)");
        }
        if !(self.rho0 > 0.0) {
            return bad("rho0 must be positive");
        }
        if !(self.xi > 1.0) {
            return bad("xi must exceed 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.inner_tol > 0.0) {
            return bad("inner_tol must be positive");
        }
        if !(self.lin_tol > 0.0) {
            return bad("lin_tol must be positive");
        }
        if self.lin_rounds_per_node == 0 || self.max_outer == 0 {
            return bad("round caps must be nonzero");
        }
        Ok(())
    }
}

/// One line of the run log (one Newton step).
#[derive(Debug, Clone)]
pub struct RunLogRow {
    pub outer: usize,
    pub inner: usize,
    pub rho: f64,
    pub m: f64,
    pub alpha: f64,
    pub max_consensus_residual: f64,
    pub max_kkt_residual: f64,
}

/// Outcome of a distributed run.
#[derive(Debug, Clone)]
pub struct DistributedRunReport {
    /// Per-node edge multipliers (physical sign), node → edge index → value.
    pub per_node_y: BTreeMap<usize, BTreeMap<usize, f64>>,
    /// Reconciled weight per edge `k = (i, j)`: the sum
    /// `y_k⁽ⁱ⁾ + y_k⁽ʲ⁾` of the two endpoint multipliers, which is the
    /// distributed estimate of the centralized `y_k`.
    pub edge_weights: Vec<f64>,
    /// Network estimate of the eigenratio optimum: `Σ_i t⁽ⁱ⁾`.
    pub t_star_estimate: f64,
    /// `max ‖Φ⁽ⁱ⁾ - Φ⁽ʲ⁾‖_F` over neighbor pairs at termination.
    pub consensus_residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Consensus residual recorded at the end of each outer round.
    pub consensus_by_outer: Vec<f64>,
    pub log: Vec<RunLogRow>,
    /// Number of Newton solves that tripped the `Φ⊗ₛI` condition warning.
    pub condition_warnings: usize,
}

fn consensus_residual(states: &[NodeState], g: &WeightedGraph) -> f64 {
    g.edges()
        .iter()
        .map(|&(i, j)| (&states[i - 1].phi - &states[j - 1].phi).norm())
        .fold(0.0, f64::max)
}

/// Run the distributed interior-point method on a connected κ-regular
/// graph.
pub fn run_distributed(
    g: &WeightedGraph,
    params: &DistributedParams,
) -> Result<DistributedRunReport, DistributedError> {
    params.validate()?;
    if !g.is_connected() {
        return Err(DistributedError::NotConnected);
    }
    if g.regular_degree().is_none() {
        return Err(DistributedError::NotRegular);
    }
    let n = g.n_nodes();
    let cons: Vec<ConstraintSet> = (1..=n)
        .map(|i| local_feasible_projectables(g, i))
        .collect::<Result<_, _>>()?;
    let obj_scale = 1.0 / n as f64;
    let mut states: Vec<NodeState> = cons
        .iter()
        .enumerate()
        .map(|(i, c)| NodeState::new(c, i + 1, params.rho0, params.m0, obj_scale))
        .collect();
    let neighbor_ids: Vec<Vec<usize>> = (1..=n).map(|i| g.neighbors(i)).collect();

    let mut log = Vec::new();
    let mut consensus_by_outer = Vec::new();
    let mut inner_total = 0usize;
    let mut condition_warnings = 0usize;

    for outer in 1..=params.max_outer {
        // Start each round at the iterates' own complementarity scale
        // (ρ₀ caps it); levels far above only inflate the iterates.
        let mu0 = states
            .iter()
            .map(|st| (&st.phi * &st.s).trace() / st.phi.nrows() as f64)
            .fold(0.0f64, f64::max);
        let mut rho = params.rho0.min((2.0 * mu0).max(params.eps));
        let mut steps_at_level = 0usize;
        let mut level_done = false;
        let mut tiny_steps = 0usize;
        while !level_done {
            for st in &mut states {
                st.rho = rho;
            }
            // Synchronous Φ exchange: every node works from the same
            // snapshot of its neighbors.
            let phis: Vec<DMatrix<f64>> = states.iter().map(|s| s.phi.clone()).collect();
            let mut systems = Vec::with_capacity(n);
            for st in &states {
                let nbmap: BTreeMap<usize, DMatrix<f64>> = neighbor_ids[st.node_id - 1]
                    .iter()
                    .map(|&j| (j, phis[j - 1].clone()))
                    .collect();
                systems.push(assemble_node_newton(st, &cons[st.node_id - 1], &nbmap)?);
            }
            let max_kkt = systems.iter().map(|s| s.r.amax()).fold(0.0f64, f64::max);

            let mut rows = Vec::with_capacity(n);
            let mut backs = Vec::with_capacity(n);
            for sys in &systems {
                let (row, back) = eliminate_slack(sys, n)?;
                if row.condition_warning {
                    condition_warnings += 1;
                }
                rows.push(row);
                backs.push(back);
            }

            let outcome = match flooded_linear_solve(&rows, g, params.lin_tol) {
                Ok(o) => o,
                Err(DistributedError::LinearSolveDiverged { rounds, residual }) => {
                    // The direct solve has hit its floating-point floor. If
                    // the iterates are already essentially solved, the round
                    // is done; a large Newton residual here is a real
                    // failure.
                    if residual <= 1e-2 && max_kkt <= 1e-3 {
                        break;
                    }
                    return Err(DistributedError::InnerDiverged {
                        outer,
                        detail: format!(
                            "linear solve stalled after {rounds} rounds (residual {residual:.3e})"
                        ),
                    });
                }
                Err(other) => return Err(other),
            };
            // Each node extracts its own direction from its own estimate.
            let wb = rows[0].block_width;
            let mut deltas = Vec::with_capacity(n);
            for (i, sys) in systems.iter().enumerate() {
                let est = &outcome.per_node[i];
                let local = est.rows(i * wb, wb).into_owned();
                let dm = local.rows(0, sys.n_cons).into_owned();
                let u = local.rows(sys.n_cons, sys.svec_dim).into_owned();
                let dphi = smat(&u)?;
                let ds = backs[i].delta_s(&u)?;
                deltas.push((dm, dphi, ds));
            }
            let alphas: Vec<f64> = states
                .iter()
                .zip(deltas.iter())
                .map(|(st, (_, dphi, ds))| local_step_length(st, dphi, ds, params.tau))
                .collect();
            let (alpha, _) = min_consensus_alpha(&alphas, g);
            for (st, (dm, dphi, ds)) in states.iter_mut().zip(deltas.iter()) {
                st.apply_step(&cons[st.node_id - 1], alpha, dm, dphi, ds)
                    .map_err(|e| DistributedError::InnerDiverged {
                        outer,
                        detail: e.to_string(),
                    })?;
            }
            inner_total += 1;
            steps_at_level += 1;
            log.push(RunLogRow {
                outer,
                inner: inner_total,
                rho,
                m: states[0].m_penalty,
                alpha,
                max_consensus_residual: consensus_residual(&states, g),
                max_kkt_residual: max_kkt,
            });
            // The barrier level advances once every node's complementarity
            // measure tr(ΦS)/(2N) has caught up with it (worst node decides,
            // one more max-consensus round in a deployment).
            let mu = states
                .iter()
                .map(|st| (&st.phi * &st.s).trace() / st.phi.nrows() as f64)
                .fold(0.0f64, f64::max);
            // Exit once the perturbed KKT system is solved to the working
            // level: decaying ρ beyond the f64-meaningful range only lets
            // the iterates drift.
            if max_kkt <= params.inner_tol && mu <= params.inner_tol {
                break;
            }
            if alpha < 1e-10 {
                tiny_steps += 1;
                if tiny_steps >= 5 {
                    if max_kkt <= 1e-3 {
                        break;
                    }
                    return Err(DistributedError::InnerDiverged {
                        outer,
                        detail: format!("step length collapsed with Newton residual {max_kkt:.3e}"),
                    });
                }
            } else {
                tiny_steps = 0;
            }
            if mu <= 2.0 * rho || steps_at_level >= 20 {
                if rho <= params.eps {
                    level_done = true;
                } else {
                    rho = (rho * params.theta).max(params.eps);
                    steps_at_level = 0;
                }
            }
        }

        let delta = consensus_residual(&states, g);
        consensus_by_outer.push(delta);
        // Agreement alone is not enough: a degraded iterate can agree on a
        // non-solution. Require every node's Newton residual to be small at
        // termination.
        let final_kkt = {
            let mut worst = 0.0f64;
            for st in &states {
                let nbmap: BTreeMap<usize, DMatrix<f64>> = neighbor_ids[st.node_id - 1]
                    .iter()
                    .map(|&j| (j, states[j - 1].phi.clone()))
                    .collect();
                let sys = assemble_node_newton(st, &cons[st.node_id - 1], &nbmap)?;
                worst = worst.max(sys.r.amax());
            }
            worst
        };
        if delta <= params.tol && final_kkt <= 1e-3 {
            let per_node_y: BTreeMap<usize, BTreeMap<usize, f64>> =
                states.iter().map(|st| (st.node_id, st.y_mults())).collect();
            let edge_weights: Vec<f64> = g
                .edges()
                .iter()
                .enumerate()
                .map(|(k, &(i, j))| per_node_y[&i][&k] + per_node_y[&j][&k])
                .collect();
            let t_star_estimate = states.iter().map(|st| st.t_mult).sum();
            return Ok(DistributedRunReport {
                per_node_y,
                edge_weights,
                t_star_estimate,
                consensus_residual: delta,
                outer_iterations: outer,
                inner_iterations: inner_total,
                consensus_by_outer,
                log,
                condition_warnings,
            });
        }
        for (st, c) in states.iter_mut().zip(cons.iter()) {
            st.m_penalty *= params.xi;
            st.reset_cone_variables(c);
        }
    }
    Err(DistributedError::ConsensusNotReached {
        outer: params.max_outer,
        residual: *consensus_by_outer.last().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_irregular_or_disconnected_graphs() {
        let star = WeightedGraph::new(4, vec![(1, 2), (1, 3), (1, 4)]).unwrap();
        assert!(matches!(
            run_distributed(&star, &DistributedParams::default()),
            Err(DistributedError::NotRegular)
        ));
        let split = WeightedGraph::new(4, vec![(1, 2), (3, 4)]).unwrap();
        assert!(matches!(
            run_distributed(&split, &DistributedParams::default()),
            Err(DistributedError::NotConnected)
        ));
    }

    #[test]
    fn rejects_bad_params() {
        let g = WeightedGraph::ring(4).unwrap();
        let mut p = DistributedParams::default();
        p.theta = 1.5;
        assert!(matches!(
            run_distributed(&g, &p),
            Err(DistributedError::BadParams(_))
        ));
    }
}
