//! Centralized interior-point solver: the one-supernode specialization of
//! the per-node Newton machinery.
//!
//! One Newton step is taken per barrier level, `ρ ← ρθ` down to ε, then the
//! iteration keeps refining at the barrier floor until the KKT report is
//! clean (or the iteration budget runs out).

use nalgebra::DMatrix;
use std::collections::BTreeMap;

use super::problem::{kkt_residuals, SdpProblem, SdpSolution, SolverParams};
use super::SdpError;
use crate::distributed::{
    assemble_node_newton, eliminate_slack, full_constraint_set, local_step_length, newton_residual,
    ConstraintSet, NodeState,
};
use crate::graph::WeightedGraph;
use crate::sdp::algebra::smat;

/// Target violation level at which iteration stops.
const CONV_TOL: f64 = 1e-9;
/// Acceptable violation level when progress has stalled.
const ACCEPT_TOL: f64 = 5e-8;

/// Solution-invariant ratio: every feasibility, cone, and gap requirement
/// of a returned solution, normalized so 1.0 sits exactly at tolerance.
/// Degenerate optima leave the diagnostic stationarity/complementarity
/// lines wobbling above the clean threshold while the solution itself is
/// fine; this is what gates acceptance of the best iterate.
fn invariant_ratio(rep: &super::problem::KktReport) -> f64 {
    [
        rep.dual_trace / 1e-7,
        rep.dual_ones / 1e-7,
        rep.dual_edge_max / 1e-7,
        rep.phi1_neg / 1e-9,
        rep.phi2_neg / 1e-9,
        (-rep.primal_min_eig1).max(0.0) / 1e-7,
        (-rep.primal_min_eig2).max(0.0) / 1e-7,
        rep.gap / 1e-6,
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Custom interior starting point.
#[derive(Debug, Clone)]
pub struct SdpStart {
    pub phi1: DMatrix<f64>,
    pub phi2: DMatrix<f64>,
    /// Initial dual slack (2N×2N positive definite).
    pub s: DMatrix<f64>,
}

pub(crate) struct CentralSolver {
    pub cons: ConstraintSet,
    pub state: NodeState,
    tau: f64,
}

pub(crate) struct StepInfo {
    pub alpha: f64,
    #[allow(dead_code)]
    pub condition_warning: bool,
}

impl CentralSolver {
    pub fn new(
        g: &WeightedGraph,
        params: &SolverParams,
        start: Option<&SdpStart>,
    ) -> Result<Self, SdpError> {
        let cons = full_constraint_set(g)?;
        let state = match start {
            None => NodeState::new(&cons, 1, params.rho0, 0.0, 1.0),
            Some(s) => NodeState::from_blocks(
                &cons,
                1,
                &s.phi1,
                &s.phi2,
                s.s.clone(),
                params.rho0,
                0.0,
                1.0,
            ),
        };
        Ok(Self {
            cons,
            state,
            tau: params.tau,
        })
    }

    /// One Newton step at the state's current ρ. The step length starts at
    /// the damped fraction-to-boundary value and backtracks while a shorter
    /// step gives a smaller Newton residual; off strictly complementary
    /// optima the full step oscillates.
    pub fn step(&mut self) -> Result<StepInfo, SdpError> {
        let sys = assemble_node_newton(&self.state, &self.cons, &BTreeMap::new())?;
        let (row, back) = eliminate_slack(&sys, 1)?;
        let sol = crate::linalg::solve_equilibrated(&row.q_hat_rows, &row.r_hat)
            .ok_or_else(|| SdpError::Numerical("reduced Newton system is singular".into()))?;
        let nc = sys.n_cons;
        let d = sys.svec_dim;
        let dm = sol.rows(0, nc).into_owned();
        let u = sol.rows(nc, d).into_owned();
        let dphi = smat(&u)?;
        let ds = back.delta_s(&u)?;
        let alpha_max = local_step_length(&self.state, &dphi, &ds, self.tau);

        let none = BTreeMap::new();
        let mut best: Option<(f64, f64, NodeState)> = None;
        for scale in [1.0, 0.5, 0.25, 0.125] {
            let alpha = alpha_max * scale;
            let mut trial = self.state.clone();
            if trial
                .apply_step(&self.cons, alpha, &dm, &dphi, &ds)
                .is_err()
            {
                continue;
            }
            let res = newton_residual(&trial, &self.cons, &none).norm();
            if best.as_ref().map(|(r, _, _)| res < *r).unwrap_or(true) {
                best = Some((res, alpha, trial));
            }
        }
        let (_, alpha, next) =
            best.ok_or_else(|| SdpError::Numerical("no admissible step length".into()))?;
        self.state = next;
        Ok(StepInfo {
            alpha,
            condition_warning: row.condition_warning,
        })
    }

    pub fn current_solution(&self, p: &SdpProblem, iterations: usize) -> SdpSolution {
        let y_map = self.state.y_mults();
        let y: Vec<f64> = (0..p.basis.len()).map(|k| y_map[&k]).collect();
        let phi1 = self.state.phi1();
        let t_star = self.state.t_mult;
        let gap = (t_star - phi1.trace()).abs();
        SdpSolution {
            t_star,
            y,
            y0: self.state.y0_mult,
            phi1,
            phi2: self.state.phi2(),
            gap,
            iterations,
        }
    }
}

/// Solve the assembled program from the default interior start.
pub fn solve_sdp(p: &SdpProblem, params: &SolverParams) -> Result<SdpSolution, SdpError> {
    solve_sdp_with_start(p, params, None)
}

/// Solve from a caller-supplied interior start (exercised by the
/// uniqueness tests).
pub fn solve_sdp_with_start(
    p: &SdpProblem,
    params: &SolverParams,
    start: Option<&SdpStart>,
) -> Result<SdpSolution, SdpError> {
    params.validate()?;
    let mut solver = CentralSolver::new(&p.graph, params, start)?;
    // Centering toward a barrier level far above the iterate's own
    // complementarity measure just inflates and deflates the iterate; start
    // at the level the iterate is actually on (ρ₀ stays the cap).
    let mu0 = complementarity_measure(&solver.state.phi, &solver.state.s);
    let mut rho = params.rho0.min((LEVEL_ADVANCE * mu0).max(params.eps));
    let mut iterations = 0usize;
    let mut best = f64::INFINITY;
    let mut best_candidate: Option<(f64, SdpSolution)> = None;
    let mut stall = 0usize;
    let mut tiny_steps = 0usize;
    let mut steps_at_level = 0usize;
    loop {
        solver.state.rho = rho;
        let info = solver.step()?;
        iterations += 1;
        steps_at_level += 1;
        if info.alpha < 1e-12 {
            tiny_steps += 1;
        } else {
            tiny_steps = 0;
        }
        let sol = solver.current_solution(p, iterations);
        let rep = kkt_residuals(&sol, p);
        let violation = rep.max_violation();
        if violation <= CONV_TOL {
            return Ok(sol);
        }
        let ratio = invariant_ratio(&rep);
        if best_candidate
            .as_ref()
            .map(|(r, _)| ratio < *r)
            .unwrap_or(true)
        {
            best_candidate = Some((ratio, sol.clone()));
        }
        if rho <= params.eps {
            if violation < 0.9 * best {
                stall = 0;
            } else {
                stall += 1;
                if stall >= 8 && violation <= ACCEPT_TOL {
                    return Ok(sol);
                }
            }
        }
        best = best.min(violation);
        if iterations >= params.max_iters || tiny_steps >= 5 {
            if violation <= ACCEPT_TOL {
                return Ok(sol);
            }
            // Return the best in-tolerance iterate seen, if there is one.
            if let Some((ratio, best_sol)) = best_candidate {
                if ratio <= 0.8 {
                    return Ok(best_sol);
                }
            }
            return Err(SdpError::Convergence {
                iterations,
                max_violation: violation,
            });
        }
        // Decay the barrier only once the iterate's complementarity measure
        // has caught up with the current level; a level left behind makes
        // the Newton direction exit the cone and the step length collapse.
        let mu = complementarity_measure(&solver.state.phi, &solver.state.s);
        if mu <= LEVEL_ADVANCE * rho || steps_at_level >= LEVEL_STEP_CAP {
            rho = (rho * params.theta).max(params.eps);
            steps_at_level = 0;
        }
    }
}

/// `tr(ΦS) / (2N)`.
pub(crate) fn complementarity_measure(phi: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    (phi * s).trace() / phi.nrows() as f64
}

/// Barrier level advances when μ ≤ LEVEL_ADVANCE·ρ.
pub(crate) const LEVEL_ADVANCE: f64 = 2.0;
/// Hard cap on Newton steps per barrier level.
pub(crate) const LEVEL_STEP_CAP: usize = 20;

/// Result of the sign-constrained (`y ≥ 0`) solve.
#[derive(Debug, Clone)]
pub struct NonnegOutcome {
    /// Weights over the ORIGINAL edge list; dropped edges carry 0.
    pub y: Vec<f64>,
    pub t_star: f64,
    /// Indices (into the original edge list) forced to zero.
    pub dropped: Vec<usize>,
    /// Final unconstrained solution on the retained subgraph.
    pub solution: SdpSolution,
    /// The retained subgraph.
    pub graph: WeightedGraph,
}

/// Solve with nonnegative weights imposed, by iteratively dropping edges
/// whose unconstrained optimum turns negative and re-solving on the
/// subgraph. At the fixed point the dropped edges have nonnegative dual
/// indicators, which is exactly the sign-constrained KKT system.
pub fn solve_sdp_nonneg(
    g: &WeightedGraph,
    params: &SolverParams,
) -> Result<NonnegOutcome, SdpError> {
    let mut active: Vec<usize> = (0..g.n_edges()).collect();
    for _ in 0..=g.n_edges() {
        let edges: Vec<(usize, usize)> = active.iter().map(|&k| g.edges()[k]).collect();
        let sub = WeightedGraph::new(g.n_nodes(), edges)?;
        if !sub.is_connected() {
            return Err(SdpError::Numerical(
                "nonnegative active set disconnected the graph".into(),
            ));
        }
        let p = super::problem::assemble_problem(&sub)?;
        let sol = solve_sdp(&p, params)?;
        let negative: Vec<usize> = sol
            .y
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < -1e-9)
            .map(|(pos, _)| pos)
            .collect();
        if negative.is_empty() {
            let mut y = vec![0.0; g.n_edges()];
            for (pos, &k) in active.iter().enumerate() {
                y[k] = sol.y[pos];
            }
            let dropped: Vec<usize> = (0..g.n_edges()).filter(|k| !active.contains(k)).collect();
            return Ok(NonnegOutcome {
                y,
                t_star: sol.t_star,
                dropped,
                solution: sol,
                graph: sub,
            });
        }
        active = active
            .iter()
            .enumerate()
            .filter(|(pos, _)| !negative.contains(pos))
            .map(|(_, &k)| k)
            .collect();
    }
    Err(SdpError::Numerical(
        "nonnegative active-set iteration failed to settle".into(),
    ))
}
