//! Local constraint sets, per-node iterates, and Newton-block assembly.
//!
//! Block layout of the full per-node Newton matrix (unknowns
//! `[Δy₀, Δt, Δy_k…, svec(ΔΦ), svec(ΔS)]`, residuals
//! `[r_dual, r_primal, r_comp]`):
//!
//! ```text
//!      ⎡ 0    𝒜    0      ⎤            ⎡ 0  0     0 ⎤
//! Q  = ⎢ 𝒜ᵀ   0    -I     ⎥,      C  = ⎢ 0  2M·I  0 ⎥,
//!      ⎣ 0    S⊗ₛI  Φ⊗ₛI  ⎦            ⎣ 0  0     0 ⎦
//! ```
//!
//! with `𝒜ᵀ = [svec(𝟙̂), svec(Ĩ), svec(Ê_k)…]`. The global system is
//! `diag(Q⁽ⁱ⁾) + L_u ⊗ C`. Gauss elimination of `svec(ΔS)` leaves
//!
//! ```text
//! Q̂ = ⎡ 0    𝒜                  ⎤,   Ĉ = ⎡ 0  0    ⎤,
//!     ⎣ 𝒜ᵀ   (Φ⊗ₛI)⁻¹(S⊗ₛI)     ⎦        ⎣ 0  2M·I ⎦
//! ```
//!
//! and `r̂ = [r_dual; r_primal + (Φ⊗ₛI)⁻¹ r_comp]`.
//!
//! Sign convention: the multiplier stored for an edge constraint is the
//! coefficient of `Ê_k` in the dual slack; the physical edge weight used in
//! reports is its negation (`y_k = -η_k`), which matches the primal
//! eigenratio program.

use nalgebra::{Cholesky, DMatrix, DVector};
use std::collections::BTreeMap;

use super::DistributedError;
use crate::graph::{edge_basis, WeightedGraph};
use crate::linalg;
use crate::sdp::algebra::{smat, svec_len, svec_unchecked, sym_kron};

/// Ridge put on the 𝟙-direction of the initial Φ₁ block. The dual feasible
/// set forces Φ₁𝟙 = 0, so an exactly feasible start would be singular; the
/// ridge keeps the first iterate positive definite while staying close to
/// feasibility.
const INIT_RIDGE: f64 = 1e-3;

/// Condition-number level of `Φ ⊗ₛ I` above which elimination flags a
/// warning.
const COND_WARN: f64 = 1e14;

/// Relative eigenvalue floor applied to accepted iterates. Dual-feasible Φ
/// approaches a singular face of the cone as ρ → 0 (feasibility forces
/// Φ₁𝟙 = 0), and the slack does the same on the primal side; pinning the
/// smallest eigenvalue at working precision keeps factorizations valid
/// without moving any residual above the 1e-13 level.
const EIG_FLOOR: f64 = 1e-13;

/// Equality-constraint data of one local feasible set Ω_i (or of the whole
/// problem, for the centralized specialization).
///
/// Constraint order is `[𝟙̂, Ĩ, Ê_k…]` with edges ascending by global edge
/// index; right-hand sides are `[0, 1, 0…]`.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    n_graph: usize,
    edge_indices: Vec<usize>,
    matrices: Vec<DMatrix<f64>>,
    obj_matrix: DMatrix<f64>,
    rhs: DVector<f64>,
    a_rows: DMatrix<f64>,
}

impl ConstraintSet {
    fn build(g: &WeightedGraph, edge_indices: Vec<usize>) -> Result<Self, DistributedError> {
        let n = g.n_nodes();
        let two_n = 2 * n;
        let mut ones_hat = DMatrix::zeros(two_n, two_n);
        for i in 0..n {
            for j in 0..n {
                ones_hat[(i, j)] = 1.0;
            }
        }
        let mut i_tilde = DMatrix::zeros(two_n, two_n);
        let mut i_hat = DMatrix::zeros(two_n, two_n);
        for i in 0..n {
            i_tilde[(n + i, n + i)] = 1.0;
            i_hat[(i, i)] = 1.0;
        }
        let mut matrices = vec![ones_hat, i_tilde];
        for &k in &edge_indices {
            let e = edge_basis(g.edges()[k], n)?;
            let mut e_hat = DMatrix::zeros(two_n, two_n);
            e_hat.view_mut((0, 0), (n, n)).copy_from(&(-&e));
            e_hat.view_mut((n, n), (n, n)).copy_from(&e);
            matrices.push(e_hat);
        }
        let mut rhs = DVector::zeros(matrices.len());
        rhs[1] = 1.0;
        let d = svec_len(two_n);
        let mut a_rows = DMatrix::zeros(matrices.len(), d);
        for (row, m) in matrices.iter().enumerate() {
            a_rows
                .row_mut(row)
                .copy_from(&svec_unchecked(m).transpose());
        }
        Ok(Self {
            n_graph: n,
            edge_indices,
            matrices,
            obj_matrix: i_hat,
            rhs,
            a_rows,
        })
    }

    /// Number of equality constraints (κ + 2).
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Graph node count N; iterate matrices are 2N×2N.
    pub fn n_graph(&self) -> usize {
        self.n_graph
    }

    /// svec length of a 2N×2N symmetric matrix.
    pub fn svec_dim(&self) -> usize {
        svec_len(2 * self.n_graph)
    }

    /// Global edge indices covered by this set, ascending.
    pub fn edge_indices(&self) -> &[usize] {
        &self.edge_indices
    }

    /// Constraint matrices, `[𝟙̂, Ĩ, Ê_k…]`.
    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// Objective coefficient matrix `Î = diag(I_N, 0)`.
    pub fn obj_matrix(&self) -> &DMatrix<f64> {
        &self.obj_matrix
    }

    /// Rows `svec(G_j)ᵀ` of the constraint operator.
    pub fn a_rows(&self) -> &DMatrix<f64> {
        &self.a_rows
    }
}

/// Constraint matrices of node `node`'s local feasible set: `𝟙̂`, `Ĩ`, and
/// `Ê_k` for incident edges only.
pub fn local_feasible_projectables(
    g: &WeightedGraph,
    node: usize,
) -> Result<ConstraintSet, DistributedError> {
    if node < 1 || node > g.n_nodes() {
        return Err(DistributedError::BadNode(node));
    }
    ConstraintSet::build(g, g.incident_edges(node))
}

/// All-edge constraint set: the one-supernode (centralized) specialization.
pub fn full_constraint_set(g: &WeightedGraph) -> Result<ConstraintSet, DistributedError> {
    ConstraintSet::build(g, (0..g.n_edges()).collect())
}

/// One node's interior-point iterate.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    /// `diag(Φ₁⁽ⁱ⁾, Φ₂⁽ⁱ⁾)`, positive definite.
    pub phi: DMatrix<f64>,
    /// Dual slack, positive definite.
    pub s: DMatrix<f64>,
    pub t_mult: f64,
    pub y0_mult: f64,
    /// Multipliers of the `Ê_k` constraints keyed by global edge index
    /// (internal sign; see [`NodeState::y_mults`]).
    eta_mults: BTreeMap<usize, f64>,
    pub rho: f64,
    pub m_penalty: f64,
    /// Scale of the objective coefficient (`1/N` per node in a distributed
    /// run, `1` for the centralized supernode).
    pub obj_scale: f64,
}

impl NodeState {
    /// Fresh interior start: `Φ₂ = I/N`, `Φ₁ = (I - (1-δ)𝟙𝟙ᵀ/N)/N` with the
    /// small 𝟙-ridge δ, `S = I`, multipliers zero.
    pub fn new(
        cons: &ConstraintSet,
        node_id: usize,
        rho0: f64,
        m_penalty: f64,
        obj_scale: f64,
    ) -> Self {
        let n = cons.n_graph;
        let two_n = 2 * n;
        let mut phi = DMatrix::zeros(two_n, two_n);
        let nf = n as f64;
        for i in 0..n {
            for j in 0..n {
                let centering = if i == j { 1.0 } else { 0.0 } - (1.0 - INIT_RIDGE) / nf;
                phi[(i, j)] = centering / nf;
            }
            phi[(n + i, n + i)] = 1.0 / nf;
        }
        let s = DMatrix::identity(two_n, two_n);
        let eta_mults = cons.edge_indices.iter().map(|&k| (k, 0.0)).collect();
        Self {
            node_id,
            phi,
            s,
            t_mult: 0.0,
            y0_mult: 0.0,
            eta_mults,
            rho: rho0,
            m_penalty,
            obj_scale,
        }
    }

    /// Start from externally supplied blocks (e.g. a custom interior
    /// point). Off-diagonal blocks of the slack are projected away; the
    /// iterate is block diagonal throughout.
    pub fn from_blocks(
        cons: &ConstraintSet,
        node_id: usize,
        phi1: &DMatrix<f64>,
        phi2: &DMatrix<f64>,
        s: DMatrix<f64>,
        rho0: f64,
        m_penalty: f64,
        obj_scale: f64,
    ) -> Self {
        let mut state = Self::new(cons, node_id, rho0, m_penalty, obj_scale);
        let n = cons.n_graph;
        state.phi.view_mut((0, 0), (n, n)).copy_from(phi1);
        state.phi.view_mut((n, n), (n, n)).copy_from(phi2);
        state.s = s;
        state.s.view_mut((0, n), (n, n)).fill(0.0);
        state.s.view_mut((n, 0), (n, n)).fill(0.0);
        state
    }

    pub fn phi1(&self) -> DMatrix<f64> {
        let n = self.phi.nrows() / 2;
        self.phi.view((0, 0), (n, n)).into_owned()
    }

    pub fn phi2(&self) -> DMatrix<f64> {
        let n = self.phi.nrows() / 2;
        self.phi.view((n, n), (n, n)).into_owned()
    }

    /// Edge multipliers in the physical sign convention (`y_k = -η_k`),
    /// keyed by global edge index.
    pub fn y_mults(&self) -> BTreeMap<usize, f64> {
        self.eta_mults.iter().map(|(&k, &v)| (k, -v)).collect()
    }

    /// Physical-sign multiplier for one incident edge.
    pub fn edge_multiplier(&self, edge_index: usize) -> Option<f64> {
        self.eta_mults.get(&edge_index).map(|&v| -v)
    }

    fn mult_vector(&self, cons: &ConstraintSet) -> DVector<f64> {
        let mut m = DVector::zeros(cons.len());
        m[0] = self.y0_mult;
        m[1] = self.t_mult;
        for (pos, k) in cons.edge_indices.iter().enumerate() {
            m[2 + pos] = self.eta_mults[k];
        }
        m
    }

    /// Apply a step `α·Δ` to multipliers, Φ, and S; off-diagonal blocks of
    /// Φ and S are projected back to exact zero (the iterate is block
    /// diagonal by construction, the projection removes solve noise).
    pub fn apply_step(
        &mut self,
        cons: &ConstraintSet,
        alpha: f64,
        delta_mults: &DVector<f64>,
        delta_phi: &DMatrix<f64>,
        delta_s: &DMatrix<f64>,
    ) -> Result<(), DistributedError> {
        self.y0_mult += alpha * delta_mults[0];
        self.t_mult += alpha * delta_mults[1];
        for (pos, k) in cons.edge_indices.iter().enumerate() {
            *self.eta_mults.get_mut(k).unwrap() += alpha * delta_mults[2 + pos];
        }
        self.phi += delta_phi * alpha;
        self.s += delta_s * alpha;
        let n = cons.n_graph;
        self.phi.view_mut((0, n), (n, n)).fill(0.0);
        self.phi.view_mut((n, 0), (n, n)).fill(0.0);
        self.s.view_mut((0, n), (n, n)).fill(0.0);
        self.s.view_mut((n, 0), (n, n)).fill(0.0);
        floor_eigenvalues(&mut self.phi);
        floor_eigenvalues(&mut self.s);
        if Cholesky::new(self.phi.clone()).is_none() {
            return Err(DistributedError::SingularIterate("Phi"));
        }
        if Cholesky::new(self.s.clone()).is_none() {
            return Err(DistributedError::SingularIterate("S"));
        }
        Ok(())
    }

    /// Reset the cone variables to the fresh interior start while keeping
    /// the multipliers. A solved round leaves Φ and S on the cone boundary;
    /// restarting them interior costs a re-descent but keeps every round's
    /// barrier systems in the numerically trustworthy range.
    pub fn reset_cone_variables(&mut self, cons: &ConstraintSet) {
        let fresh = NodeState::new(cons, self.node_id, self.rho, self.m_penalty, self.obj_scale);
        self.phi = fresh.phi;
        self.s = fresh.s;
    }
}

/// Shift a symmetric matrix so its smallest eigenvalue stays above the
/// working-precision floor.
fn floor_eigenvalues(m: &mut DMatrix<f64>) {
    let floor = EIG_FLOOR * (1.0 + linalg::max_abs(m));
    let min = linalg::min_symmetric_eig(m);
    if min < floor {
        let shift = floor - min;
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
    }
}

/// Output of [`assemble_node_newton`]: the appendix-layout blocks plus the
/// residual vector.
#[derive(Debug, Clone)]
pub struct NodeNewtonSystem {
    pub node_id: usize,
    /// Full per-node block `Q⁽ⁱ⁾` (no penalty terms; those enter through the
    /// graph coupling).
    pub q_block: DMatrix<f64>,
    /// Coupling block `C` (2M·I in the svec(ΔΦ) slot).
    pub coupling: DMatrix<f64>,
    /// `[r_dual; svec(r_primal); svec(r_comp)]`.
    pub r: DVector<f64>,
    pub n_cons: usize,
    pub svec_dim: usize,
    /// Neighbor node ids (1-based) whose Φ entered the penalty residual.
    pub neighbors: Vec<usize>,
}

impl NodeNewtonSystem {
    /// Dimension of the per-node unknown `Δp⁽ⁱ⁾`.
    pub fn unknown_dim(&self) -> usize {
        self.n_cons + 2 * self.svec_dim
    }
}

/// Residual vector only (`[r_dual; svec r_primal; svec r_comp]`), without
/// the Newton blocks; used by step-length safeguards.
pub fn newton_residual(
    state: &NodeState,
    cons: &ConstraintSet,
    neighbor_phis: &BTreeMap<usize, DMatrix<f64>>,
) -> DVector<f64> {
    let two_n = 2 * cons.n_graph;
    let d = cons.svec_dim();
    let nc = cons.len();
    let svec_phi = svec_unchecked(&state.phi);
    let mut r_dual = &cons.rhs - &cons.a_rows * &svec_phi;
    r_dual[0] += state.rho;
    let mult = state.mult_vector(cons);
    let mut r_primal = &cons.obj_matrix * state.obj_scale + &state.s;
    for (j, g_mat) in cons.matrices.iter().enumerate() {
        r_primal -= g_mat * mult[j];
    }
    for phi_j in neighbor_phis.values() {
        r_primal -= (&state.phi - phi_j) * (2.0 * state.m_penalty);
    }
    let phs = &state.phi * &state.s;
    let sph = &state.s * &state.phi;
    let r_comp_mat = DMatrix::identity(two_n, two_n) * state.rho - (phs + sph) * 0.5;
    let mut r = DVector::zeros(nc + 2 * d);
    r.rows_mut(0, nc).copy_from(&r_dual);
    r.rows_mut(nc, d)
        .copy_from(&svec_unchecked(&linalg::symmetrize(&r_primal)));
    r.rows_mut(nc + d, d)
        .copy_from(&svec_unchecked(&r_comp_mat));
    r
}

/// Assemble the per-node Newton block and residuals at the current iterate.
///
/// `neighbor_phis` must hold the current Φ of every neighbor of this node
/// (empty for the centralized supernode).
pub fn assemble_node_newton(
    state: &NodeState,
    cons: &ConstraintSet,
    neighbor_phis: &BTreeMap<usize, DMatrix<f64>>,
) -> Result<NodeNewtonSystem, DistributedError> {
    if Cholesky::new(state.phi.clone()).is_none() {
        return Err(DistributedError::SingularIterate("Phi"));
    }
    if Cholesky::new(state.s.clone()).is_none() {
        return Err(DistributedError::SingularIterate("S"));
    }
    let two_n = 2 * cons.n_graph;
    let d = cons.svec_dim();
    let nc = cons.len();
    let eye = DMatrix::identity(two_n, two_n);
    let sk_s = sym_kron(&state.s, &eye)?;
    let sk_phi = sym_kron(&state.phi, &eye)?;

    let dim = nc + 2 * d;
    let mut q = DMatrix::zeros(dim, dim);
    q.view_mut((0, nc), (nc, d)).copy_from(&cons.a_rows);
    q.view_mut((nc, 0), (d, nc))
        .copy_from(&cons.a_rows.transpose());
    {
        let mut v = q.view_mut((nc, nc + d), (d, d));
        v.fill_diagonal(-1.0);
    }
    q.view_mut((nc + d, nc), (d, d)).copy_from(&sk_s);
    q.view_mut((nc + d, nc + d), (d, d)).copy_from(&sk_phi);

    let mut coupling = DMatrix::zeros(dim, dim);
    {
        let mut v = coupling.view_mut((nc, nc), (d, d));
        v.fill_diagonal(2.0 * state.m_penalty);
    }

    let svec_phi = svec_unchecked(&state.phi);
    let mut r_dual = &cons.rhs - &cons.a_rows * &svec_phi;
    // The ones-row equality has no interior (feasible Φ₁ annihilates 𝟙);
    // targeting tr(𝟙̂Φ) = ρ instead of 0 gives the barrier problem a
    // genuine central path in that direction, with the relaxation
    // vanishing at the barrier floor.
    r_dual[0] += state.rho;

    let mult = state.mult_vector(cons);
    let mut r_primal = &cons.obj_matrix * state.obj_scale + &state.s;
    for (j, g_mat) in cons.matrices.iter().enumerate() {
        r_primal -= g_mat * mult[j];
    }
    for phi_j in neighbor_phis.values() {
        r_primal -= (&state.phi - phi_j) * (2.0 * state.m_penalty);
    }

    let phs = &state.phi * &state.s;
    let sph = &state.s * &state.phi;
    let r_comp_mat = DMatrix::identity(two_n, two_n) * state.rho - (phs + sph) * 0.5;

    let mut r = DVector::zeros(dim);
    r.rows_mut(0, nc).copy_from(&r_dual);
    r.rows_mut(nc, d)
        .copy_from(&svec_unchecked(&linalg::symmetrize(&r_primal)));
    r.rows_mut(nc + d, d)
        .copy_from(&svec_unchecked(&r_comp_mat));

    Ok(NodeNewtonSystem {
        node_id: state.node_id,
        q_block: q,
        coupling,
        r,
        n_cons: nc,
        svec_dim: d,
        neighbors: neighbor_phis.keys().copied().collect(),
    })
}

/// One node's row block of the global slack-eliminated system.
#[derive(Debug, Clone)]
pub struct NewtonRowBlock {
    pub node_id: usize,
    /// Width of one per-node column block (κ + 2 + svec dim); identical
    /// across nodes on a regular graph.
    pub block_width: usize,
    /// The materialized row block: local diagonal block plus
    /// `(L_u row) ⊗ Ĉ` coupling.
    pub q_hat_rows: DMatrix<f64>,
    pub r_hat: DVector<f64>,
    /// Set when `cond₁(Φ ⊗ₛ I)` exceeds 1e14.
    pub condition_warning: bool,
}

/// Data needed to back-substitute `svec(ΔS)` after the reduced solve.
#[derive(Debug, Clone)]
pub struct SlackBackSub {
    sk_phi: DMatrix<f64>,
    sk_s: DMatrix<f64>,
    r_comp: DVector<f64>,
}

impl SlackBackSub {
    /// `ΔS = smat((Φ⊗ₛI)⁻¹ (r_comp - (S⊗ₛI) svec(ΔΦ)))`.
    pub fn delta_s(&self, delta_phi_svec: &DVector<f64>) -> Result<DMatrix<f64>, DistributedError> {
        let rhs = &self.r_comp - &self.sk_s * delta_phi_svec;
        let v = linalg::lu_solve(&self.sk_phi, &rhs)
            .ok_or(DistributedError::SingularIterate("Phi (x)s I"))?;
        Ok(smat(&v)?)
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum())
        .fold(0.0, f64::max)
}

/// Gauss-eliminate the slack directions from one node's Newton block and
/// materialize its row of the global reduced system.
///
/// `n_net` is the number of nodes in the network (1 for the centralized
/// supernode); `slots` maps node ids to column-block positions, which for a
/// distributed run is simply `node_id - 1`.
pub fn eliminate_slack(
    sys: &NodeNewtonSystem,
    n_net: usize,
) -> Result<(NewtonRowBlock, SlackBackSub), DistributedError> {
    let nc = sys.n_cons;
    let d = sys.svec_dim;
    let a = sys.q_block.view((0, nc), (nc, d)).into_owned();
    let sk_s = sys.q_block.view((nc + d, nc), (d, d)).into_owned();
    let sk_phi = sys.q_block.view((nc + d, nc + d), (d, d)).into_owned();
    let two_m = sys.coupling[(nc, nc)];

    let lu = sk_phi.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or(DistributedError::SingularIterate("Phi (x)s I"))?;
    let condition = one_norm(&sk_phi) * one_norm(&inv);
    let h = &inv * &sk_s;

    let r_dual = sys.r.rows(0, nc).into_owned();
    let r_primal = sys.r.rows(nc, d).into_owned();
    let r_comp = sys.r.rows(nc + d, d).into_owned();
    let r_hat_primal = &r_primal + &inv * &r_comp;

    let wb = nc + d;
    let slot = sys.node_id - 1;
    assert!(
        slot < n_net,
        "node id {} exceeds network size {n_net}",
        sys.node_id
    );
    let degree = sys.neighbors.len() as f64;
    let mut rows = DMatrix::zeros(wb, n_net * wb);
    {
        let mut own = rows.view_mut((0, slot * wb), (wb, wb));
        own.view_mut((0, nc), (nc, d)).copy_from(&a);
        own.view_mut((nc, 0), (d, nc)).copy_from(&a.transpose());
        let mut hblock = own.view_mut((nc, nc), (d, d));
        hblock.copy_from(&h);
        for i in 0..d {
            hblock[(i, i)] += two_m * degree;
        }
    }
    for &j in &sys.neighbors {
        let mut nb = rows.view_mut((nc, (j - 1) * wb + nc), (d, d));
        for i in 0..d {
            nb[(i, i)] -= two_m;
        }
    }

    let mut r_hat = DVector::zeros(wb);
    r_hat.rows_mut(0, nc).copy_from(&r_dual);
    r_hat.rows_mut(nc, d).copy_from(&r_hat_primal);

    Ok((
        NewtonRowBlock {
            node_id: sys.node_id,
            block_width: wb,
            q_hat_rows: rows,
            r_hat,
            condition_warning: condition > COND_WARN,
        },
        SlackBackSub {
            sk_phi,
            sk_s,
            r_comp,
        },
    ))
}

/// Largest step in `[0, 1]` keeping `M + α ΔM` positive semidefinite,
/// located by Cholesky bisection to 1e-12.
pub fn max_psd_step(m: &DMatrix<f64>, dm: &DMatrix<f64>) -> f64 {
    let feasible = |alpha: f64| Cholesky::new(m + dm * alpha).is_some();
    if feasible(1.0) {
        return 1.0;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Damped step length: `τ · min(1, α_max(Φ, ΔΦ), α_max(S, ΔS))`.
pub fn local_step_length(
    state: &NodeState,
    delta_phi: &DMatrix<f64>,
    delta_s: &DMatrix<f64>,
    tau: f64,
) -> f64 {
    let a_phi = max_psd_step(&state.phi, delta_phi);
    let a_s = max_psd_step(&state.s, delta_s);
    tau * a_phi.min(a_s).min(1.0)
}
