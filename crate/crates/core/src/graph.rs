//! Weighted undirected graphs, Laplacian construction, and spectral
//! summaries.
//!
//! Nodes are labelled `1..=N` everywhere: in the API, in the text format,
//! and in all reports. Edges are stored with `i < j` after normalization.
//!
//! # Graph file format
//!
//! ```text
//! # optional comments
//! nodes N
//! edge i j [w]
//! ```
//!
//! Weights are either present on every edge line or absent on all of them.
//! Writers emit weights with 17 significant digits; readers accept any
//! decimal.

use nalgebra::DMatrix;
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::str::FromStr;
use thiserror::Error;

use crate::linalg;

/// Relative tolerance used to call a Laplacian eigenvalue "zero".
pub const EIG_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("node index {index} out of range 1..={n}")]
    NodeOutOfRange { index: usize, n: usize },
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("{got} weights for {edges} edges")]
    WeightCountMismatch { got: usize, edges: usize },
    #[error("edge ({0}, {1}) already present")]
    EdgeAlreadyPresent(usize, usize),
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix must be at least 2x2 for a spectral summary")]
    TooSmall,
    #[error("graph file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// An edge-weighted undirected graph: node count, normalized edge list, and
/// optional edge weights aligned with the edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    weights: Option<Vec<f64>>,
}

impl WeightedGraph {
    /// Topology-only graph. Edge pairs are normalized to `i < j`.
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        Self::build(n_nodes, edges, None)
    }

    /// Graph with one weight per edge.
    pub fn with_weights(
        n_nodes: usize,
        edges: Vec<(usize, usize)>,
        weights: Vec<f64>,
    ) -> Result<Self, GraphError> {
        Self::build(n_nodes, edges, Some(weights))
    }

    fn build(
        n_nodes: usize,
        edges: Vec<(usize, usize)>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self, GraphError> {
        if n_nodes < 2 {
            return Err(GraphError::TooFewNodes(n_nodes));
        }
        if let Some(w) = &weights {
            if w.len() != edges.len() {
                return Err(GraphError::WeightCountMismatch {
                    got: w.len(),
                    edges: edges.len(),
                });
            }
        }
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            for idx in [a, b] {
                if idx < 1 || idx > n_nodes {
                    return Err(GraphError::NodeOutOfRange {
                        index: idx,
                        n: n_nodes,
                    });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            let e = (a.min(b), a.max(b));
            if normalized.contains(&e) {
                return Err(GraphError::DuplicateEdge(e.0, e.1));
            }
            normalized.push(e);
        }
        Ok(Self {
            n_nodes,
            edges: normalized,
            weights,
        })
    }

    /// Complete graph on `n` nodes, edges in lexicographic order.
    pub fn complete(n: usize) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for i in 1..=n {
            for j in (i + 1)..=n {
                edges.push((i, j));
            }
        }
        Self::new(n, edges)
    }

    /// Ring (cycle) graph `1-2-…-n-1`.
    pub fn ring(n: usize) -> Result<Self, GraphError> {
        let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i, i + 1)).collect();
        edges.push((1, n));
        Self::new(n, edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Same topology with the given weights.
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self, GraphError> {
        Self::build(self.n_nodes, self.edges.clone(), Some(weights))
    }

    /// Same topology with weights dropped.
    pub fn topology(&self) -> Self {
        Self {
            n_nodes: self.n_nodes,
            edges: self.edges.clone(),
            weights: None,
        }
    }

    /// Topology with one extra edge appended; weights are dropped.
    pub fn with_added_edge(&self, a: usize, b: usize) -> Result<Self, GraphError> {
        let e = (a.min(b), a.max(b));
        if self.has_edge(e.0, e.1) {
            return Err(GraphError::EdgeAlreadyPresent(e.0, e.1));
        }
        let mut edges = self.edges.clone();
        edges.push(e);
        Self::build(self.n_nodes, edges, None)
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let e = (a.min(b), a.max(b));
        self.edges.contains(&e)
    }

    /// Indices into `edges()` of the edges incident to `node` (1-based).
    pub fn incident_edges(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, &(i, j))| i == node || j == node)
            .map(|(k, _)| k)
            .collect()
    }

    /// Neighbor node labels of `node` (1-based, ascending).
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(i, j)| {
                if i == node {
                    Some(j)
                } else if j == node {
                    Some(i)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Node pairs not yet connected (candidate new edges).
    pub fn addable_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 1..=self.n_nodes {
            for j in (i + 1)..=self.n_nodes {
                if !self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Weighted Laplacian `L_w = Σ_k w_k E_k`; all-ones weights when the
    /// graph carries none.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_nodes;
        let mut l = DMatrix::zeros(n, n);
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            let w = self.weights.as_ref().map_or(1.0, |ws| ws[k]);
            let (a, b) = (i - 1, j - 1);
            l[(a, a)] += w;
            l[(b, b)] += w;
            l[(a, b)] -= w;
            l[(b, a)] -= w;
        }
        l
    }

    /// Unweighted (topology) Laplacian `L_u = Σ_k E_k`.
    pub fn unweighted_laplacian(&self) -> DMatrix<f64> {
        self.topology().laplacian()
    }

    /// Connectivity of the unweighted topology, decided by breadth-first
    /// search. Weight signs never enter this decision.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_nodes + 1];
        let mut queue = VecDeque::new();
        seen[1] = true;
        queue.push_back(1);
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n_nodes
    }

    /// `Some(κ)` when every node has exactly κ incident edges.
    pub fn regular_degree(&self) -> Option<usize> {
        let mut deg = vec![0usize; self.n_nodes + 1];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        let kappa = deg[1];
        deg[1..].iter().all(|&d| d == kappa).then_some(kappa)
    }

    /// Graph diameter (longest shortest path) of the topology; `None` when
    /// disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut worst = 0usize;
        for start in 1..=self.n_nodes {
            let mut dist = vec![usize::MAX; self.n_nodes + 1];
            dist[start] = 0;
            let mut queue = VecDeque::new();
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for v in self.neighbors(u) {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            let far = *dist[1..].iter().max().unwrap();
            if far == usize::MAX {
                return None;
            }
            worst = worst.max(far);
        }
        Some(worst)
    }

    /// Serialize in the graph file format (17 significant digits).
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {}", self.n_nodes);
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            match &self.weights {
                Some(w) => {
                    let _ = writeln!(s, "edge {} {} {:.16e}", i, j, w[k]);
                }
                None => {
                    let _ = writeln!(s, "edge {} {}", i, j);
                }
            }
        }
        s
    }
}

impl FromStr for WeightedGraph {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut n_nodes: Option<usize> = None;
        let mut edges = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut weighted: Option<bool> = None;
        for (lineno, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: String| GraphError::Parse {
                line: lineno + 1,
                msg,
            };
            match toks[0] {
                "nodes" => {
                    if n_nodes.is_some() {
                        return Err(err("repeated `nodes` line".into()));
                    }
                    if toks.len() != 2 {
                        return Err(err("expected `nodes N`".into()));
                    }
                    n_nodes = Some(
                        toks[1]
                            .parse()
                            .map_err(|e| err(format!("bad node count: {e}")))?,
                    );
                }
                "edge" => {
                    if n_nodes.is_none() {
                        return Err(err("`edge` before `nodes`".into()));
                    }
                    if toks.len() != 3 && toks.len() != 4 {
                        return Err(err("expected `edge i j [w]`".into()));
                    }
                    let i: usize = toks[1]
                        .parse()
                        .map_err(|e| err(format!("bad node index: {e}")))?;
                    let j: usize = toks[2]
                        .parse()
                        .map_err(|e| err(format!("bad node index: {e}")))?;
                    let has_w = toks.len() == 4;
                    match weighted {
                        None => weighted = Some(has_w),
                        Some(expect) if expect != has_w => {
                            return Err(err(
                                "edge lines must uniformly carry or omit weights".into()
                            ));
                        }
                        _ => {}
                    }
                    if has_w {
                        weights.push(
                            toks[3]
                                .parse()
                                .map_err(|e| err(format!("bad weight: {e}")))?,
                        );
                    }
                    edges.push((i, j));
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        let n = n_nodes.ok_or(GraphError::Parse {
            line: 0,
            msg: "missing `nodes N` line".into(),
        })?;
        if weighted == Some(true) {
            WeightedGraph::with_weights(n, edges, weights)
        } else {
            WeightedGraph::new(n, edges)
        }
    }
}

/// Rank-1 PSD basis matrix of an edge: `+1` at both diagonal slots, `-1` at
/// the two off-diagonal slots, zero elsewhere.
pub fn edge_basis(edge: (usize, usize), n: usize) -> Result<DMatrix<f64>, GraphError> {
    let (i, j) = edge;
    if i < 1 || j < 1 || i > n || j > n {
        return Err(GraphError::NodeOutOfRange { index: i.max(j), n });
    }
    if i == j {
        return Err(GraphError::SelfLoop(i));
    }
    let (a, b) = (i - 1, j - 1);
    let mut e = DMatrix::zeros(n, n);
    e[(a, a)] = 1.0;
    e[(b, b)] = 1.0;
    e[(a, b)] = -1.0;
    e[(b, a)] = -1.0;
    Ok(e)
}

/// Sorted eigenvalues of a symmetric matrix plus the spectral quantities
/// used throughout: λ₂, λ_N, and the eigenratio λ_N/λ₂ when defined.
#[derive(Debug, Clone)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<f64>,
    pub lambda2: f64,
    pub lambda_n: f64,
    /// `λ_N / λ₂`; `None` when λ₂ is not strictly positive (relative to the
    /// matrix scale).
    pub synchronizability: Option<f64>,
}

/// Eigen-summary of a symmetric matrix (ascending order, deterministic).
pub fn spectrum(l: &DMatrix<f64>) -> Result<SpectralSummary, GraphError> {
    if l.nrows() != l.ncols() || l.nrows() < 2 {
        return Err(GraphError::TooSmall);
    }
    let scale = 1.0 + linalg::max_abs(l);
    let asym = linalg::asymmetry(l);
    if asym > 1e-12 * scale {
        return Err(GraphError::NotSymmetric(asym));
    }
    let eigenvalues = linalg::symmetric_eigenvalues_sorted(l);
    let lambda2 = eigenvalues[1];
    let lambda_n = *eigenvalues.last().unwrap();
    let zero_tol = EIG_ZERO_TOL * eigenvalues.iter().fold(1.0f64, |a, &x| a.max(x.abs()));
    let synchronizability = (lambda2 > zero_tol).then(|| lambda_n / lambda2);
    Ok(SpectralSummary {
        eigenvalues,
        lambda2,
        lambda_n,
        synchronizability,
    })
}
