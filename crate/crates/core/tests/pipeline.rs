//! Cross-module integration tests: solver properties, duality diagnostics,
//! controller synthesis, and the distributed/centralized equivalences.

mod common;

use std::collections::BTreeMap;

use common::Rng;
use nalgebra::{DMatrix, DVector};
use syncopt::distributed::{
    assemble_node_newton, eliminate_slack, full_constraint_set, local_step_length,
    min_consensus_alpha, run_distributed, DistributedParams, NodeState,
};
use syncopt::edge_analysis::{analyze_edge, verify_prediction, EdgeVerdict};
use syncopt::graph::{spectrum, WeightedGraph};
use syncopt::riccati::{control_gain, energy_blocks, solve_are, solve_lyapunov, SystemModel};
use syncopt::sdp::{
    assemble_problem, recover_weights, smat, solve_sdp, solve_sdp_nonneg,
    solve_sdp_with_start, SdpStart, SolverParams,
};
use syncopt::simulate::{closed_loop_matrix, reconstruct_state, run_closed_loop, SimOptions};

fn min_eig(m: &DMatrix<f64>) -> f64 {
    let se = ((m + m.transpose()) * 0.5).symmetric_eigen();
    se.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Theorem-2 sandwich on a handful of seeded instances (the full 50-case
/// suite runs in the acceptance target).
#[test]
fn energy_block_sandwich_holds_on_seeded_instances() {
    let mut rng = Rng::new(07101);
    for _ in 0..8 {
        let q_scale = 0.5 * rng.unit();
        let sys = common::random_system(&mut rng, q_scale);
        let sys0 = sys.with_q(DMatrix::zeros(2, 2)).unwrap();
        let p = solve_are(&sys).unwrap();
        let p0 = solve_are(&sys0).unwrap();
        let n = 3 + rng.below(4);
        let g = common::random_connected_graph(&mut rng, n, 0.4);
        let w: Vec<f64> = (0..g.n_edges()).map(|_| 0.2 + rng.unit()).collect();
        let gw = g.reweighted(w).unwrap();
        let s = spectrum(&gw.laplacian()).unwrap();
        let sigmas: Vec<f64> = s.eigenvalues[1..].iter().map(|l| l / s.lambda2).collect();
        let blocks = energy_blocks(&sys, &p, &sigmas).unwrap();
        for (idx, sigma) in sigmas.iter().enumerate() {
            let h = &blocks.blocks[idx];
            let upper = &p * (sigma * sigma / (2.0 * sigma - 1.0));
            assert!(min_eig(&(h - &p0)) >= -1e-8, "lower bound violated");
            assert!(min_eig(&(upper - h)) >= -1e-8, "upper bound violated");
        }
    }
}

/// Proposition-1 check: the gain built from any connected weighted graph
/// stabilizes every disagreement mode.
#[test]
fn relative_feedback_stabilizes_every_mode() {
    let mut rng = Rng::new(40);
    for _ in 0..6 {
        let sys = common::random_system(&mut rng, 0.0);
        let p0 = solve_are(&sys).unwrap();
        let n = 3 + rng.below(5);
        let g = common::random_connected_graph(&mut rng, n, 0.5);
        let w: Vec<f64> = (0..g.n_edges()).map(|_| 0.1 + rng.unit()).collect();
        let gw = g.reweighted(w).unwrap();
        let s = spectrum(&gw.laplacian()).unwrap();
        let bbt = sys.b() * sys.b().transpose();
        for lam in &s.eigenvalues[1..] {
            let sigma = lam / s.lambda2;
            let acl = sys.a() - &bbt * &p0 * sigma;
            assert!(
                spectral_abscissa(&acl) < 0.0,
                "mode sigma={sigma} not Hurwitz"
            );
        }
    }
}

/// Solving the complete graph from random interior starts always lands on
/// the unique equal-weight optimum.
#[test]
fn complete_graph_optimum_is_unique_across_starts() {
    let n = 4;
    let g = WeightedGraph::complete(n).unwrap();
    let p = assemble_problem(&g).unwrap();
    let params = SolverParams::default();
    let mut rng = Rng::new(999);
    let nf = n as f64;
    for trial in 0..10 {
        // Random interior points: the standard start perturbed by random
        // positive-semidefinite bumps of varying size.
        let rand_psd = |rng: &mut Rng, d: usize, scale: f64| {
            let m = DMatrix::from_fn(d, d, |_, _| rng.sym());
            (&m * m.transpose()) * (scale / d as f64)
        };
        let base1 = DMatrix::from_fn(n, n, |i, j| {
            (if i == j { 1.0 } else { 0.0 } - (1.0 - 1e-3) / nf) / nf
        });
        let scale1 = 0.1 + 0.3 * rng.unit();
        let phi1 = base1 + rand_psd(&mut rng, n, scale1);
        let scale2 = 0.1 + 0.4 * rng.unit();
        let phi2 = {
            let raw = DMatrix::identity(n, n) / nf + rand_psd(&mut rng, n, scale2);
            let tr = raw.trace();
            raw / tr
        };
        let mut s = DMatrix::identity(2 * n, 2 * n);
        let s_scale1 = 0.8 * rng.unit();
        let bump1 = rand_psd(&mut rng, n, s_scale1);
        let s_scale2 = 0.8 * rng.unit();
        let bump2 = rand_psd(&mut rng, n, s_scale2);
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] += bump1[(i, j)];
                s[(n + i, n + j)] += bump2[(i, j)];
            }
        }
        let start = SdpStart { phi1, phi2, s };
        let sol = solve_sdp_with_start(&p, &params, Some(&start)).unwrap();
        for y in &sol.y {
            assert!(
                (y - 1.0 / n as f64).abs() <= 1e-5,
                "trial {trial}: y = {y} off the unique optimum"
            );
        }
        assert!((sol.t_star - 1.0).abs() <= 1e-6);
    }
}

/// Free-sign weights never lose to sign-constrained weights (the feasible
/// domain only shrinks), checked on the 8-node benchmark with its bridging
/// edge.
#[test]
fn free_sign_never_worse_than_nonnegative() {
    let params = SolverParams::default();
    let g = common::net8b_with((7, 8)).with_added_edge(3, 7).unwrap();
    let p = assemble_problem(&g).unwrap();
    let free = solve_sdp(&p, &params).unwrap();
    let constrained = solve_sdp_nonneg(&g, &params).unwrap();
    assert!(free.t_star <= constrained.t_star + 1e-9);
    assert!(
        constrained.y.iter().all(|&v| v >= -1e-9),
        "constrained solve returned a negative weight"
    );
    // Here the free optimum genuinely uses a negative weight.
    assert!(free.y.iter().any(|&v| v < -1e-3));
    assert!(free.t_star < constrained.t_star - 1e-4);
}

/// Strongly indicated candidate edges: re-solving confirms the predicted
/// sign and a strict optimum improvement.
#[test]
fn edge_indicator_sign_soundness() {
    let params = SolverParams::default();
    let mut rng = Rng::new(4242);
    let mut strong = 0;
    let mut attempts = 0;
    while strong < 4 && attempts < 40 {
        attempts += 1;
        let n = 4 + rng.below(4);
        let g = common::random_connected_graph(&mut rng, n, 0.35);
        let candidates = g.addable_edges();
        if candidates.is_empty() {
            continue;
        }
        let p = assemble_problem(&g).unwrap();
        let sol = match solve_sdp(&p, &params) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let edge = candidates[rng.below(candidates.len())];
        let cls = analyze_edge(&g, &sol, edge).unwrap();
        if cls.indicator.abs() <= 10.0 * cls.zero_tol {
            continue;
        }
        strong += 1;
        let rep = verify_prediction(&g, edge, &cls, &params).unwrap();
        assert!(rep.passed, "edge {edge:?}: {}", rep.detail);
        match cls.verdict {
            EdgeVerdict::NegativeRequired => assert!(rep.new_edge_y < 0.0),
            EdgeVerdict::PositiveRequired => assert!(rep.new_edge_y > 0.0),
            EdgeVerdict::NegativeExists => unreachable!("strong indicator"),
        }
        assert!(rep.new_t_star < rep.old_t_star - 1e-7);
    }
    assert!(strong >= 4, "too few strongly indicated edges sampled");
}

/// Indicator is invariant under consistent node relabeling.
#[test]
fn edge_indicator_relabeling_invariance() {
    let params = SolverParams::default();
    let g = common::mesh8();
    let p = assemble_problem(&g).unwrap();
    let sol = solve_sdp(&p, &params).unwrap();
    let cls = analyze_edge(&g, &sol, (7, 8)).unwrap();

    // Relabel nodes by the cyclic shift i -> i % 8 + 1.
    let perm = |i: usize| i % 8 + 1;
    let relabeled: Vec<(usize, usize)> =
        g.edges().iter().map(|&(i, j)| (perm(i), perm(j))).collect();
    let h = WeightedGraph::new(8, relabeled).unwrap();
    let ph = assemble_problem(&h).unwrap();
    let solh = solve_sdp(&ph, &params).unwrap();
    let clsh = analyze_edge(&h, &solh, (perm(7), perm(8))).unwrap();
    assert!(
        (cls.indicator - clsh.indicator).abs() <= 1e-6,
        "indicator changed under relabeling: {} vs {}",
        cls.indicator,
        clsh.indicator
    );
}

/// One supernode holding every constraint reproduces the centralized
/// Newton iterates step by step.
#[test]
fn distributed_machinery_specializes_to_centralized() {
    let g = WeightedGraph::ring(4).unwrap();
    let p = assemble_problem(&g).unwrap();
    let params = SolverParams::default();

    // Three iterations are not enough to converge; the public solver must
    // report that, and the same three steps are re-run by hand below.
    let mut capped = params.clone();
    capped.max_iters = 3;
    match solve_sdp(&p, &capped) {
        Err(syncopt::sdp::SdpError::Convergence { .. }) => {}
        other => panic!("unexpected solver outcome: {other:?}"),
    }

    let cons = full_constraint_set(&g).unwrap();
    let mut a = NodeState::new(&cons, 1, params.rho0, 0.0, 1.0);
    let mut b = NodeState::new(&cons, 1, params.rho0, 0.0, 1.0);
    let mut rho = params.rho0;
    for _ in 0..3 {
        for st in [&mut a, &mut b] {
            st.rho = rho;
            let sys = assemble_node_newton(st, &cons, &BTreeMap::new()).unwrap();
            let (row, back) = eliminate_slack(&sys, 1).unwrap();
            let sol = row.q_hat_rows.clone().lu().solve(&row.r_hat).unwrap();
            let dm = sol.rows(0, sys.n_cons).into_owned();
            let u = sol.rows(sys.n_cons, sys.svec_dim).into_owned();
            let dphi = smat(&u).unwrap();
            let ds = back.delta_s(&u).unwrap();
            let alpha = local_step_length(st, &dphi, &ds, params.tau);
            st.apply_step(&cons, alpha, &dm, &dphi, &ds).unwrap();
        }
        assert!((&a.phi - &b.phi).norm() <= 1e-9);
        assert!((&a.s - &b.s).norm() <= 1e-9);
        assert!((a.t_mult - b.t_mult).abs() <= 1e-9);
        rho *= params.theta;
    }
}

/// Consensus penalty escalation never worsens the neighbor disagreement
/// between outer rounds, and per-node multipliers of a shared edge agree
/// at termination.
#[test]
fn penalty_escalation_tightens_consensus() {
    let g = WeightedGraph::ring(4).unwrap();
    let mut params = DistributedParams::default();
    // Force several outer rounds.
    params.tol = 2e-5;
    params.max_outer = 4;
    let report = match run_distributed(&g, &params) {
        Ok(rep) => rep,
        Err(syncopt::distributed::DistributedError::ConsensusNotReached { .. }) => {
            // Tightened tolerance may stay out of reach; re-run with the
            // default tolerance for the agreement checks below.
            let mut relaxed = params.clone();
            relaxed.tol = DistributedParams::default().tol;
            run_distributed(&g, &relaxed).unwrap()
        }
        Err(e) => panic!("distributed run failed: {e}"),
    };
    for pair in report.consensus_by_outer.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-9,
            "consensus residual grew between outer rounds: {pair:?}"
        );
    }
    // Shared-edge multipliers agree within the consensus tolerance, and the
    // reconciled weight is their sum.
    for (k, &(i, j)) in g.edges().iter().enumerate() {
        let yi = report.per_node_y[&i][&k];
        let yj = report.per_node_y[&j][&k];
        assert!((yi - yj).abs() <= 2.0 * report.consensus_residual + 1e-6);
        assert!((report.edge_weights[k] - (yi + yj)).abs() <= 1e-12);
    }
}

/// Distributed run on the 2-regular complete triangle against the
/// centralized oracle.
#[test]
fn distributed_triangle_matches_centralized() {
    let g = WeightedGraph::complete(3).unwrap();
    let rep = run_distributed(&g, &DistributedParams::default()).unwrap();
    let p = assemble_problem(&g).unwrap();
    let sol = solve_sdp(&p, &SolverParams::default()).unwrap();
    assert!((rep.t_star_estimate - 1.0).abs() < 1e-2, "t = {}", rep.t_star_estimate);
    for (k, w) in rep.edge_weights.iter().enumerate() {
        assert!((w - 1.0 / 3.0).abs() < 1e-2, "edge {k}: {w}");
        assert!((w - sol.y[k]).abs() < 1e-2);
    }
}

/// Min-consensus terminates with every node holding the exact global
/// minimum regardless of placement.
#[test]
fn min_consensus_reaches_global_min() {
    let mut rng = Rng::new(31337);
    for _ in 0..20 {
        let n = 3 + rng.below(5);
        let g = common::random_connected_graph(&mut rng, n, 0.4);
        let alphas: Vec<f64> = (0..g.n_nodes()).map(|_| rng.unit()).collect();
        let expect = alphas.iter().copied().fold(f64::INFINITY, f64::min);
        let (got, rounds) = min_consensus_alpha(&alphas, &g);
        assert_eq!(got, expect);
        assert!(rounds <= g.diameter().unwrap());
    }
}

/// Simulating with physical weights and the λ₂-scaled gain matches
/// simulating with scaled weights and the unscaled gain.
#[test]
fn control_form_equivalence() {
    let sys = common::bench_system(None);
    let p0 = solve_are(&sys).unwrap();
    let g = WeightedGraph::ring(4).unwrap();
    let params = SolverParams::default();
    let sol = solve_sdp(&assemble_problem(&g).unwrap(), &params).unwrap();
    let p = assemble_problem(&g).unwrap();
    let real = recover_weights(&sol, &p).unwrap();

    let gw = g.reweighted(real.w.clone()).unwrap();
    let lw = gw.laplacian();
    let k_scaled = control_gain(&p0, sys.b(), real.lambda2).unwrap();

    let gy = g.reweighted(sol.y.clone()).unwrap();
    let ly = gy.laplacian();
    let k_unit = control_gain(&p0, sys.b(), 1.0).unwrap();

    let acl_w = closed_loop_matrix(sys.a(), sys.b(), &k_scaled, &lw).unwrap();
    let acl_y = closed_loop_matrix(sys.a(), sys.b(), &k_unit, &ly).unwrap();
    assert!(
        (&acl_w - &acl_y).norm() <= 1e-9 * (1.0 + acl_w.norm()),
        "closed loops differ: {}",
        (&acl_w - &acl_y).norm()
    );

    let mut rng = Rng::new(7);
    let x0 = DVector::from_fn(8, |_, _| rng.sym());
    let opts = SimOptions::default();
    let ra = run_closed_loop(sys.a(), sys.b(), &k_scaled, &lw, &x0, None, &opts).unwrap();
    let rb = run_closed_loop(sys.a(), sys.b(), &k_unit, &ly, &x0, None, &opts).unwrap();
    let da = ra.trajectory.states.last().unwrap();
    let db = rb.trajectory.states.last().unwrap();
    assert!((da - db).norm() <= 1e-9 * (1.0 + da.norm()));
}

/// Numeric quadrature of the control energy agrees with the block-analytic
/// value on a converged run.
#[test]
fn numeric_energy_matches_analytic() {
    let sys = common::bench_system(None);
    let p0 = solve_are(&sys).unwrap();
    let g = WeightedGraph::complete(3).unwrap();
    let p = assemble_problem(&g).unwrap();
    let sol = solve_sdp(&p, &SolverParams::default()).unwrap();
    let real = recover_weights(&sol, &p).unwrap();
    let gw = g.reweighted(real.w.clone()).unwrap();
    let lw = gw.laplacian();
    let s = spectrum(&lw).unwrap();
    let k = control_gain(&p0, sys.b(), s.lambda2).unwrap();
    let sigmas: Vec<f64> = s.eigenvalues[1..].iter().map(|l| l / s.lambda2).collect();
    let blocks = energy_blocks(&sys, &p0, &sigmas).unwrap();

    let xhat = common::sweep_xhat0();
    let x0 = reconstruct_state(&DVector::zeros(2), &xhat, &lw).unwrap();
    let res = run_closed_loop(
        sys.a(),
        sys.b(),
        &k,
        &lw,
        &x0,
        Some(&blocks),
        &SimOptions::default(),
    )
    .unwrap();
    let ja = res.j_analytic.unwrap();
    assert!(ja > 0.0);
    assert!(
        (res.j_numeric - ja).abs() <= 0.01 * ja.max(1e-3),
        "numeric {} vs analytic {}",
        res.j_numeric,
        ja
    );
    let d = &res.disagreement;
    assert!(d.last().unwrap() <= &(1e-6 * d[0]));
}

/// Lyapunov-based blocks against the closed-form Q = 0 expression on the
/// solved benchmark realization.
#[test]
fn q_zero_blocks_match_closed_form_on_solved_graph() {
    let sys = common::bench_system(None);
    let p0 = solve_are(&sys).unwrap();
    let g = common::mesh8();
    let p = assemble_problem(&g).unwrap();
    let sol = solve_sdp(&p, &SolverParams::default()).unwrap();
    let real = recover_weights(&sol, &p).unwrap();
    let gw = g.reweighted(real.w.clone()).unwrap();
    let s = spectrum(&gw.laplacian()).unwrap();
    let sigmas: Vec<f64> = s.eigenvalues[1..].iter().map(|l| l / s.lambda2).collect();
    let blocks = energy_blocks(&sys, &p0, &sigmas).unwrap();
    for (idx, sigma) in sigmas.iter().enumerate() {
        let closed = &p0 * (sigma * sigma / (2.0 * sigma - 1.0));
        let err = (&blocks.blocks[idx] - &closed).norm();
        assert!(err <= 1e-6 * (1.0 + p0.norm()), "mode {idx}: err {err}");
    }
}

/// Lyapunov solve against a quadrature oracle on a solved closed loop
/// (independent route).
#[test]
fn lyapunov_block_matches_quadrature_on_closed_loop() {
    let sys = common::bench_system(None);
    let p0 = solve_are(&sys).unwrap();
    let bbt = sys.b() * sys.b().transpose();
    let sigma = 2.5;
    let acl = sys.a() - &bbt * &p0 * sigma;
    let w = &p0 * &bbt * &p0 * (sigma * sigma);
    let h = solve_lyapunov(&acl, &w).unwrap();

    // RK4 on M' = AᵀM + MA with composite-Simpson accumulation. The slow
    // closed-loop mode decays like e^{-0.13t}, so the tail needs a long
    // horizon; Simpson keeps the quadrature error itself below 1e-6.
    let dt = 1e-3;
    let steps = (150.0 / dt) as usize;
    let deriv = |m: &DMatrix<f64>| acl.transpose() * m + m * &acl;
    let mut m = w.clone();
    let mut acc = DMatrix::zeros(2, 2);
    let mut f_prev2 = w.clone();
    let mut f_prev = w.clone();
    for s in 1..=steps {
        let k1 = deriv(&m);
        let k2 = deriv(&(&m + &k1 * (dt / 2.0)));
        let k3 = deriv(&(&m + &k2 * (dt / 2.0)));
        let k4 = deriv(&(&m + &k3 * dt));
        m = &m + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if s % 2 == 1 {
            f_prev = m.clone();
        } else {
            acc += (&f_prev2 + &f_prev * 4.0 + &m) * (dt / 3.0);
            f_prev2 = m.clone();
        }
    }
    let diff = (&h - &acc).norm();
    assert!(diff < 1e-5, "diff {diff}");
}

/// End-to-end file pipeline: graph text -> solve -> weights -> controller.
#[test]
fn file_formats_roundtrip_through_pipeline() {
    let text = "nodes 4\nedge 1 2\nedge 2 3\nedge 3 4\nedge 1 4\n";
    let g: WeightedGraph = text.parse().unwrap();
    let p = assemble_problem(&g).unwrap();
    let sol = solve_sdp(&p, &SolverParams::default()).unwrap();
    let real = recover_weights(&sol, &p).unwrap();
    let gw = g.reweighted(real.w.clone()).unwrap();
    let reparsed: WeightedGraph = gw.to_file_string().parse().unwrap();
    assert_eq!(reparsed.weights().unwrap(), gw.weights().unwrap());

    let sys_text = "0 1\n-1 2\n\n1\n2\n";
    let sys = SystemModel::from_file_str(sys_text).unwrap();
    let p0 = solve_are(&sys).unwrap();
    let k = control_gain(&p0, sys.b(), real.lambda2).unwrap();
    assert_eq!(k.nrows(), 1);
    assert_eq!(k.ncols(), 2);
}
