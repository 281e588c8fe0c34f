//! Shared fixtures and oracles for the integration and acceptance suites.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use syncopt::graph::WeightedGraph;
use syncopt::riccati::{solve_are, SystemModel};

/// SplitMix64: tiny deterministic generator for seeded suites.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [-1, 1).
    pub fn sym(&mut self) -> f64 {
        (self.next_u64() as f64 / u64::MAX as f64) * 2.0 - 1.0
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        self.next_u64() as f64 / u64::MAX as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// Random connected topology: a random spanning tree plus extra edges.
pub fn random_connected_graph(rng: &mut Rng, n: usize, extra_prob: f64) -> WeightedGraph {
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for v in 2..=n {
        let u = 1 + rng.below(v - 1);
        edges.push((u.min(v), u.max(v)));
    }
    for i in 1..=n {
        for j in (i + 1)..=n {
            if !edges.contains(&(i, j)) && rng.unit() < extra_prob {
                edges.push((i, j));
            }
        }
    }
    edges.sort_unstable();
    WeightedGraph::new(n, edges).unwrap()
}

/// Random stabilizable system with eigenvalues a healthy margin away from
/// the imaginary axis, n = 2.
pub fn random_system(rng: &mut Rng, q_scale: f64) -> SystemModel {
    loop {
        let a = DMatrix::from_fn(2, 2, |_, _| 2.0 * rng.sym());
        let margin = a
            .complex_eigenvalues()
            .iter()
            .map(|l| l.re.abs())
            .fold(f64::INFINITY, f64::min);
        if margin < 1e-2 {
            continue;
        }
        let b = DMatrix::from_fn(2, 1, |_, _| 2.0 * rng.sym());
        if b.norm() < 0.3 {
            continue;
        }
        let q = if q_scale > 0.0 {
            let g = DMatrix::from_fn(2, 2, |_, _| rng.sym());
            Some(g.transpose() * &g * q_scale)
        } else {
            None
        };
        if let Ok(sys) = SystemModel::new(a, b, q) {
            // Only emit instances whose stabilizing solution is solvable at
            // desk precision; the suites test block properties, not ARE
            // solvability of near-degenerate pairs.
            if solve_are(&sys).is_ok()
                && solve_are(&sys.with_q(DMatrix::zeros(2, 2)).unwrap()).is_ok()
            {
                return sys;
            }
        }
    }
}

/// The 8-node, 9-edge mesh (with the optional bridging edge (7, 8) left
/// out) used by the eigenratio benchmarks.
pub fn mesh8() -> WeightedGraph {
    WeightedGraph::new(
        8,
        vec![
            (1, 2),
            (2, 3),
            (2, 7),
            (2, 8),
            (3, 4),
            (3, 8),
            (4, 5),
            (5, 6),
            (6, 7),
        ],
    )
    .unwrap()
}

/// The 12 unambiguous edges of the second 8-node benchmark; a 13th edge
/// (one of [`NET8B_CANDIDATES`]) completes it.
pub fn net8b_base_edges() -> Vec<(usize, usize)> {
    vec![
        (1, 3),
        (1, 6),
        (1, 8),
        (2, 3),
        (2, 7),
        (3, 4),
        (3, 5),
        (3, 6),
        (4, 5),
        (4, 7),
        (5, 6),
        (6, 8),
    ]
}

/// Candidate 13th edges for the second benchmark graph.
pub const NET8B_CANDIDATES: [(usize, usize); 3] = [(7, 8), (6, 7), (2, 8)];

/// Build the second benchmark graph with a given 13th edge.
pub fn net8b_with(edge: (usize, usize)) -> WeightedGraph {
    let mut edges = net8b_base_edges();
    edges.push(edge);
    edges.sort_unstable();
    WeightedGraph::new(8, edges).unwrap()
}

/// Benchmark initial condition for the 8-node energy experiment
/// ((N-1)·n = 14 entries, per-mode stacking).
pub fn net8b_xhat0() -> DVector<f64> {
    DVector::from_vec(vec![
        1.4090, 1.4172, 0.6715, -1.2075, 0.7172, 1.6302, 0.4889, 1.0347, 0.7269, -0.3034, 0.2939,
        -0.7873, 0.8884, -1.1471,
    ])
}

/// Benchmark initial condition for the 3-node sweep ((N-1)·n = 4 entries).
pub fn sweep_xhat0() -> DVector<f64> {
    DVector::from_vec(vec![-1.3077, -0.4336, 0.3426, 3.5784])
}

/// Resolve the second benchmark's 13th edge: the candidate whose optimum
/// reproduces the published eigenratio 3.0592 within 2e-3. Solved once and
/// cached for the whole test binary.
pub fn resolved_net8b() -> Option<&'static WeightedGraph> {
    use std::sync::OnceLock;
    static RESOLVED: OnceLock<Option<WeightedGraph>> = OnceLock::new();
    RESOLVED
        .get_or_init(|| {
            let params = syncopt::sdp::SolverParams::default();
            for cand in NET8B_CANDIDATES {
                let g = net8b_with(cand);
                let p = syncopt::sdp::assemble_problem(&g).ok()?;
                if let Ok(sol) = syncopt::sdp::solve_sdp(&p, &params) {
                    if (sol.t_star - 3.0592).abs() <= 2e-3 {
                        return Some(g);
                    }
                }
            }
            None
        })
        .as_ref()
}

/// The two-state benchmark system A = [[0,1],[-1,2]], B = [1;2].
pub fn bench_system(q: Option<DMatrix<f64>>) -> SystemModel {
    SystemModel::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 2.0]),
        DMatrix::from_column_slice(2, 1, &[1.0, 2.0]),
        q,
    )
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
