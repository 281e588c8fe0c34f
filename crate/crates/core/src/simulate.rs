//! Closed-loop multi-agent simulation and numeric energy measurement.
//!
//! The stacked network dynamics under relative-state feedback are
//!
//! ```text
//! Ẋ = (I_N ⊗ A) X + (L_w ⊗ B K) X,      U = (L_w ⊗ K) X,
//! ```
//!
//! and the modal change of coordinates `X̃ = (Tᵀ ⊗ I_n) X`, with `T`
//! orthonormal and its first column `𝟙/√N`, splits the network into the
//! consensus trajectory and N-1 regulated disagreement modes.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{spectrum, WeightedGraph};
use crate::linalg;
use crate::riccati::{self, EnergyBlocks, RiccatiError, SystemModel};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("time step and horizon must be positive with horizon >= dt")]
    BadGrid,
    #[error("state norm exceeded 1e12 at t = {0:.3}: closed loop is diverging")]
    Divergence(f64),
    #[error("disagreement has not decayed below {target:.1e} of its initial value by t = {t_end:.1} (reached {achieved:.3e}); extend the horizon")]
    HorizonTooShort {
        target: f64,
        t_end: f64,
        achieved: f64,
    },
    #[error("Laplacian zero eigenvalue is not simple (λ₂ = {0:.3e}); graph disconnected")]
    RepeatedZeroEigenvalue(f64),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// `I_N ⊗ A + L_w ⊗ (B K)`.
pub fn closed_loop_matrix(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    l_w: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SimulateError> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || k.ncols() != n || k.nrows() != b.ncols() {
        return Err(SimulateError::Dimension(format!(
            "A {}x{}, B {}x{}, K {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            k.nrows(),
            k.ncols()
        )));
    }
    if l_w.nrows() != l_w.ncols() {
        return Err(SimulateError::Dimension("L_w must be square".into()));
    }
    let eye_n = DMatrix::identity(l_w.nrows(), l_w.nrows());
    Ok(eye_n.kronecker(a) + l_w.kronecker(&(b * k)))
}

/// Orthonormal modal transform of a weighted Laplacian: first column forced
/// to `𝟙/√N`, the rest Gram-Schmidt-orthonormalized eigenvectors in
/// ascending eigenvalue order, each sign-fixed so its largest-magnitude
/// entry is positive.
pub fn modal_transform(l_w: &DMatrix<f64>) -> Result<DMatrix<f64>, SimulateError> {
    let summary = spectrum(l_w)?;
    let n = l_w.nrows();
    let scale = summary
        .eigenvalues
        .iter()
        .fold(1.0f64, |a, &x| a.max(x.abs()));
    if summary.lambda2 <= 1e-9 * scale {
        return Err(SimulateError::RepeatedZeroEigenvalue(summary.lambda2));
    }
    let se = linalg::symmetrize(l_w).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));

    let mut t = DMatrix::zeros(n, n);
    let ones = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    t.set_column(0, &ones);
    for (col, &src) in order.iter().skip(1).enumerate() {
        let mut v = se.eigenvectors.column(src).into_owned();
        // Orthonormalize against everything already placed.
        for prev in 0..=col {
            let proj = t.column(prev).dot(&v);
            v -= t.column(prev) * proj;
        }
        let norm = v.norm();
        if norm < 1e-9 {
            return Err(SimulateError::Dimension(
                "eigenvector collapsed during orthonormalization".into(),
            ));
        }
        v /= norm;
        // Deterministic sign: largest-magnitude entry positive.
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        if v[lead] < 0.0 {
            v = -v;
        }
        t.set_column(col + 1, &v);
    }
    Ok(t)
}

/// Split a stacked initial state into the consensus component `x̃₁` and the
/// disagreement modes `x̂₀ = (x̃₂, …, x̃_N)`.
pub fn transform_initial(
    x0: &DVector<f64>,
    l_w: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>), SimulateError> {
    let n = l_w.nrows();
    if x0.len() % n != 0 {
        return Err(SimulateError::Dimension(format!(
            "state length {} not divisible by N = {n}",
            x0.len()
        )));
    }
    let dim = x0.len() / n;
    let t = modal_transform(l_w)?;
    let eye = DMatrix::identity(dim, dim);
    let tilde = t.transpose().kronecker(&eye) * x0;
    let xbar = tilde.rows(0, dim).into_owned();
    let xhat = tilde.rows(dim, dim * (n - 1)).into_owned();
    Ok((xbar, xhat))
}

/// Rebuild a stacked state from modal components.
pub fn reconstruct_state(
    xbar: &DVector<f64>,
    xhat: &DVector<f64>,
    l_w: &DMatrix<f64>,
) -> Result<DVector<f64>, SimulateError> {
    let n = l_w.nrows();
    let dim = xbar.len();
    if xhat.len() != dim * (n - 1) {
        return Err(SimulateError::Dimension(format!(
            "modal vector length {} != {}",
            xhat.len(),
            dim * (n - 1)
        )));
    }
    let t = modal_transform(l_w)?;
    let eye = DMatrix::identity(dim, dim);
    let mut tilde = DVector::zeros(dim * n);
    tilde.rows_mut(0, dim).copy_from(xbar);
    tilde.rows_mut(dim, dim * (n - 1)).copy_from(xhat);
    Ok(t.kronecker(&eye) * tilde)
}

/// Fixed-grid trajectory of the stacked network state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub n_agents: usize,
}

impl Trajectory {
    pub fn state_dim(&self) -> usize {
        self.states[0].len() / self.n_agents
    }

    /// `max_{i,j} ‖x_i - x_j‖` per time point.
    pub fn disagreement(&self) -> Vec<f64> {
        let n = self.n_agents;
        let dim = self.state_dim();
        self.states
            .iter()
            .map(|x| {
                let mut worst = 0.0f64;
                for i in 0..n {
                    for j in (i + 1)..n {
                        let d = (x.rows(i * dim, dim) - x.rows(j * dim, dim)).norm();
                        worst = worst.max(d);
                    }
                }
                worst
            })
            .collect()
    }
}

/// Classical fourth-order fixed-step integration of `Ẋ = Acl X`.
pub fn integrate(
    acl: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: f64,
    dt: f64,
    n_agents: usize,
) -> Result<Trajectory, SimulateError> {
    rk4_run(acl, x0, horizon, dt, n_agents, false)
}

fn rk4_run(
    acl: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: f64,
    dt: f64,
    n_agents: usize,
    project_consensus: bool,
) -> Result<Trajectory, SimulateError> {
    if !(dt > 0.0) || horizon < dt {
        return Err(SimulateError::BadGrid);
    }
    if acl.ncols() != x0.len() || x0.len() % n_agents != 0 {
        return Err(SimulateError::Dimension(format!(
            "Acl {}x{}, X0 length {}, {} agents",
            acl.nrows(),
            acl.ncols(),
            x0.len(),
            n_agents
        )));
    }
    let steps = (horizon / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    times.push(0.0);
    states.push(x.clone());
    for s in 1..=steps {
        let k1 = acl * &x;
        let k2 = acl * &(&x + &k1 * (dt / 2.0));
        let k3 = acl * &(&x + &k2 * (dt / 2.0));
        let k4 = acl * &(&x + &k3 * dt);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if project_consensus {
            // Truncation error seeds the agreement direction; with unstable
            // open-loop dynamics any seed is amplified exponentially, so it
            // is removed every step.
            x = remove_consensus_component(&x, n_agents);
        }
        let t = s as f64 * dt;
        if x.norm() > 1e12 {
            return Err(SimulateError::Divergence(t));
        }
        times.push(t);
        states.push(x.clone());
    }
    Ok(Trajectory {
        times,
        states,
        n_agents,
    })
}

/// Composite-trapezoid quadrature of `∫ UᵀU dt` along a trajectory with
/// `U = (L_w ⊗ K) X`. The disagreement must have decayed below 1e-6 of its
/// initial value by the end of the horizon (tail-truncation control).
pub fn measure_energy(
    traj: &Trajectory,
    l_w: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> Result<f64, SimulateError> {
    let gain = l_w.kronecker(k);
    if gain.ncols() != traj.states[0].len() {
        return Err(SimulateError::Dimension(format!(
            "L⊗K is {}x{}, state length {}",
            gain.nrows(),
            gain.ncols(),
            traj.states[0].len()
        )));
    }
    let disagreement = traj.disagreement();
    let initial = disagreement[0];
    if initial > 0.0 {
        let last = *disagreement.last().unwrap();
        if last > 1e-6 * initial {
            return Err(SimulateError::HorizonTooShort {
                target: 1e-6,
                t_end: *traj.times.last().unwrap(),
                achieved: last / initial,
            });
        }
    }
    let mut j = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (t, x) in traj.times.iter().zip(traj.states.iter()) {
        let u = &gain * x;
        let val = u.norm_squared();
        if let Some((tp, vp)) = prev {
            j += 0.5 * (val + vp) * (t - tp);
        }
        prev = Some((*t, val));
    }
    Ok(j.max(0.0))
}

/// Options for the adaptive closed-loop run.
#[derive(Debug, Clone)]
pub struct SimOptions {
    pub dt: f64,
    /// Horizon extension chunk.
    pub chunk: f64,
    /// Hard cap on the simulated horizon.
    pub t_max: f64,
    /// Relative disagreement-decay target.
    pub decay_rel: f64,
    /// Simulate with the consensus component projected out. Disagreement
    /// and control energy are invariant to that component, while with
    /// unstable open-loop dynamics it grows like e^{at} and numerically
    /// swamps both measurements.
    pub consensus_frame: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            chunk: 10.0,
            t_max: 200.0,
            decay_rel: 1e-6,
            consensus_frame: true,
        }
    }
}

/// `(I - 𝟙𝟙ᵀ/N) ⊗ I_n` applied to a stacked state: subtract the agent mean
/// from every agent.
pub fn remove_consensus_component(x: &DVector<f64>, n_agents: usize) -> DVector<f64> {
    let dim = x.len() / n_agents;
    let mut mean = DVector::zeros(dim);
    for i in 0..n_agents {
        mean += x.rows(i * dim, dim);
    }
    mean /= n_agents as f64;
    let mut out = x.clone();
    for i in 0..n_agents {
        let mut rows = out.rows_mut(i * dim, dim);
        rows -= &mean;
    }
    out
}

/// Result of an adaptive closed-loop run.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub trajectory: Trajectory,
    pub disagreement: Vec<f64>,
    pub j_numeric: f64,
    /// Analytic cost from the energy blocks when supplied.
    pub j_analytic: Option<f64>,
}

/// Simulate until the disagreement decays (extending the horizon in
/// chunks), then measure the control energy.
pub fn run_closed_loop(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    l_w: &DMatrix<f64>,
    x0: &DVector<f64>,
    blocks: Option<&EnergyBlocks>,
    opts: &SimOptions,
) -> Result<SimulationResult, SimulateError> {
    let acl = closed_loop_matrix(a, b, k, l_w)?;
    let n_agents = l_w.nrows();

    let j_analytic = match blocks {
        Some(bl) => {
            let (_, xhat) = transform_initial(x0, l_w)?;
            Some(riccati::energy_cost(bl, &xhat)?)
        }
        None => None,
    };

    // A consensual start never leaves the agreement subspace: no control is
    // spent, and with unstable open-loop dynamics the absolute state would
    // only grow. Report the trivial run directly.
    let init = Trajectory {
        times: vec![0.0],
        states: vec![x0.clone()],
        n_agents,
    };
    let d0 = init.disagreement()[0];
    if d0 <= 1e-14 * (1.0 + x0.norm()) {
        return Ok(SimulationResult {
            trajectory: init,
            disagreement: vec![0.0],
            j_numeric: 0.0,
            j_analytic,
        });
    }

    let start = if opts.consensus_frame {
        remove_consensus_component(x0, n_agents)
    } else {
        x0.clone()
    };

    // Chunked integration. In the consensus frame the disagreement dynamics
    // are autonomous under the same closed-loop matrix and the agreement
    // component is projected away at every step.
    let mut trajectory = Trajectory {
        times: vec![0.0],
        states: vec![start.clone()],
        n_agents,
    };
    let mut state = start;
    let mut t_base = 0.0f64;
    loop {
        let remaining = opts.t_max - t_base;
        let span = opts.chunk.min(remaining);
        let chunk = rk4_run(&acl, &state, span, opts.dt, n_agents, opts.consensus_frame)?;
        for (t, x) in chunk.times.iter().zip(chunk.states.iter()).skip(1) {
            trajectory.times.push(t_base + t);
            trajectory.states.push(x.clone());
        }
        state = chunk.states.last().unwrap().clone();
        t_base += span;

        let disagreement = trajectory.disagreement();
        let decayed = *disagreement.last().unwrap() <= opts.decay_rel * disagreement[0];
        if decayed {
            let j_numeric = measure_energy(&trajectory, l_w, k)?;
            return Ok(SimulationResult {
                trajectory,
                disagreement,
                j_numeric,
                j_analytic,
            });
        }
        if t_base >= opts.t_max {
            return Err(SimulateError::HorizonTooShort {
                target: opts.decay_rel,
                t_end: t_base,
                achieved: disagreement.last().unwrap() / disagreement[0],
            });
        }
    }
}

/// Sweep the Riccati weight `Q = εI` and report the analytic energy for
/// each ε, in input order.
pub fn epsilon_sweep(
    base: &SystemModel,
    xhat0: &DVector<f64>,
    g: &WeightedGraph,
    epsilons: &[f64],
) -> Result<Vec<(f64, f64)>, SimulateError> {
    let summary = spectrum(&g.laplacian())?;
    let lambda2 = summary.lambda2;
    if summary.synchronizability.is_none() {
        return Err(SimulateError::RepeatedZeroEigenvalue(lambda2));
    }
    let sigmas: Vec<f64> = summary.eigenvalues[1..]
        .iter()
        .map(|l| l / lambda2)
        .collect();
    let n = base.state_dim();
    let mut out = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let sys = base.with_q(DMatrix::identity(n, n) * eps)?;
        let p = riccati::solve_are(&sys)?;
        let blocks = riccati::energy_blocks(&sys, &p, &sigmas)?;
        let j = riccati::energy_cost(&blocks, xhat0)?;
        out.push((eps, j));
    }
    Ok(out)
}
