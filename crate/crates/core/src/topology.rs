//! Communication graphs and gossip (mixing) matrices.
//!
//! A [`GossipMatrix`] is a symmetric doubly-stochastic `m x m` matrix with
//! spectrum in `[0, 1]` and a simple unit eigenvalue. Its mixing rate
//! `lambda2` (second-largest singular value) is computed once by a dense
//! symmetric eigensolve and cached.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance on row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance on spectral conditions.
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Attempts made by [`Adjacency::erdos_renyi`] before giving up.
pub const ER_MAX_ATTEMPTS: usize = 1000;

/// Undirected simple graph over `m` agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    m: usize,
    // stored as (lo, hi) with lo < hi
    edges: BTreeSet<(usize, usize)>,
}

impl Adjacency {
    pub fn new(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidTopology(
                "graph needs at least one agent".into(),
            ));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::InvalidTopology(format!("self-loop on agent {i}")));
            }
            if i >= m || j >= m {
                return Err(Error::InvalidTopology(format!(
                    "edge ({i}, {j}) references an agent outside 0..{m}"
                )));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { m, edges: set })
    }

    pub fn complete(m: usize) -> Result<Self> {
        Self::new(m, (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))))
    }

    pub fn ring(m: usize) -> Result<Self> {
        if m <= 2 {
            return Self::path(m);
        }
        Self::new(m, (0..m).map(|i| (i, (i + 1) % m)))
    }

    pub fn path(m: usize) -> Result<Self> {
        Self::new(m, (1..m).map(|i| (i - 1, i)))
    }

    /// G(m, p) random graph, resampled until connected.
    pub fn erdos_renyi(m: usize, edge_prob: f64, seed: u64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidTopology(
                "erdos_renyi needs at least two agents".into(),
            ));
        }
        if !(edge_prob > 0.0 && edge_prob <= 1.0) {
            return Err(Error::InvalidTopology(format!(
                "edge probability {edge_prob} outside (0, 1]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..ER_MAX_ATTEMPTS {
            let mut edges = Vec::new();
            for i in 0..m {
                for j in i + 1..m {
                    if rng.random::<f64>() < edge_prob {
                        edges.push((i, j));
                    }
                }
            }
            let graph = Self::new(m, edges)?;
            if graph.is_connected() {
                return Ok(graph);
            }
        }
        Err(Error::InvalidTopology(format!(
            "no connected G({m}, {edge_prob}) sample in {ER_MAX_ATTEMPTS} attempts; \
             try a larger edge probability"
        )))
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, agent: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(i, j)| {
                if i == agent {
                    Some(j)
                } else if j == agent {
                    Some(i)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.m];
        let mut out = Vec::new();
        for start in 0..self.m {
            if seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(u) = queue.pop_front() {
                comp.push(u);
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Combinatorial Laplacian `D - A`.
    pub fn laplacian(&self) -> Array2<f64> {
        let mut lap = Array2::zeros((self.m, self.m));
        for &(i, j) in &self.edges {
            lap[[i, j]] = -1.0;
            lap[[j, i]] = -1.0;
            lap[[i, i]] += 1.0;
            lap[[j, j]] += 1.0;
        }
        lap
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GossipMatrix {
    weights: Array2<f64>,
    lambda2: f64,
}

impl GossipMatrix {
    /// `W = I - L / lambda_max(L)` for a connected graph.
    pub fn from_laplacian(adj: &Adjacency) -> Result<Self> {
        let comps = adj.components();
        if comps.len() > 1 {
            return Err(Error::Disconnected {
                component: comps[1].clone(),
            });
        }
        let m = adj.m();
        if m == 1 {
            return Ok(Self::averaging(1));
        }
        let lap = adj.laplacian();
        let lambda_max = symmetric_eigenvalues(&lap)[0];
        let mut w = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                let id = if i == j { 1.0 } else { 0.0 };
                w[[i, j]] = id - lap[[i, j]] / lambda_max;
            }
        }
        Ok(Self::with_weights(w))
    }

    /// Exponential ring: agent `i` talks to `i +- 2^k (mod m)`, uniform weights
    /// over itself and its neighbours. When the uniform matrix has a negative
    /// eigenvalue (m >= 8 or so) the lazy form `(I + W) / 2` is returned so the
    /// spectrum stays inside `[0, 1]`.
    pub fn exp2_ring(m: usize) -> Self {
        assert!(m >= 1, "exp2 ring needs at least one agent");
        let mut w = Array2::zeros((m, m));
        for i in 0..m {
            let mut nbrs = BTreeSet::new();
            let mut hop = 1usize;
            while hop < m {
                nbrs.insert((i + hop) % m);
                nbrs.insert((i + m - hop % m) % m);
                hop *= 2;
            }
            nbrs.remove(&i);
            let weight = 1.0 / (nbrs.len() + 1) as f64;
            w[[i, i]] = weight;
            for j in nbrs {
                w[[i, j]] = weight;
            }
        }
        let min_eig = *symmetric_eigenvalues(&w).last().unwrap();
        if min_eig < -SPECTRAL_TOL {
            let mut lazy = w.mapv(|v| 0.5 * v);
            for i in 0..m {
                lazy[[i, i]] += 0.5;
            }
            w = lazy;
        }
        Self::with_weights(w)
    }

    /// `W = (1/m) 11^T`.
    pub fn averaging(m: usize) -> Self {
        Self {
            weights: Array2::from_elem((m, m), 1.0 / m as f64),
            lambda2: 0.0,
        }
    }

    /// Wrap a user-supplied matrix after checking every gossip condition.
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() || weights.nrows() == 0 {
            return Err(Error::InvalidTopology(format!(
                "gossip matrix must be square and non-empty, got {:?}",
                weights.dim()
            )));
        }
        let report = validate_gossip(&weights);
        if !report.passed() {
            return Err(Error::InvalidTopology(report.to_string()));
        }
        Ok(Self::with_weights(weights))
    }

    fn with_weights(weights: Array2<f64>) -> Self {
        let lambda2 = second_singular_value(&weights);
        Self { weights, lambda2 }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn m(&self) -> usize {
        self.weights.nrows()
    }

    /// Second-largest singular value of `W`.
    pub fn mixing_rate(&self) -> f64 {
        self.lambda2
    }

    /// Spectral gap `1 - lambda2`.
    pub fn spectral_gap(&self) -> f64 {
        1.0 - self.lambda2
    }
}

/// Free-function form of [`GossipMatrix::mixing_rate`].
pub fn mixing_rate(w: &GossipMatrix) -> f64 {
    w.mixing_rate()
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mat = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let mut eig: Vec<f64> = SymmetricEigen::new(mat)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// Second-largest singular value of a symmetric matrix (0 for `1 x 1`).
pub fn second_singular_value(w: &Array2<f64>) -> f64 {
    if w.nrows() < 2 {
        return 0.0;
    }
    let mut sv: Vec<f64> = symmetric_eigenvalues(w).into_iter().map(f64::abs).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv[1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Check {
    pub passed: bool,
    /// Size of the measured violation (0 when the condition holds exactly).
    pub violation: f64,
}

/// Per-condition outcome of [`validate_gossip`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GossipReport {
    pub symmetric: Check,
    pub row_stochastic: Check,
    pub spectrum_in_unit_interval: Check,
    pub simple_unit_eigenvalue: Check,
}

impl GossipReport {
    pub fn passed(&self) -> bool {
        self.symmetric.passed
            && self.row_stochastic.passed
            && self.spectrum_in_unit_interval.passed
            && self.simple_unit_eigenvalue.passed
    }
}

impl std::fmt::Display for GossipReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let rows = [
            ("symmetric", self.symmetric),
            ("row sums equal one", self.row_stochastic),
            ("0 <= W <= I", self.spectrum_in_unit_interval),
            ("null(I - W) = span(1)", self.simple_unit_eigenvalue),
        ];
        for (i, (name, check)) in rows.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            let status = if check.passed { "ok" } else { "FAIL" };
            write!(f, "{name}: {status} ({:.3e})", check.violation)?;
        }
        Ok(())
    }
}

/// Check the four gossip-matrix conditions on an arbitrary square matrix.
/// Spectral checks use the symmetric part when `w` is not symmetric.
pub fn validate_gossip(w: &Array2<f64>) -> GossipReport {
    assert_eq!(
        w.nrows(),
        w.ncols(),
        "validate_gossip needs a square matrix"
    );
    let m = w.nrows();

    let asym = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| (w[[i, j]] - w[[j, i]]).abs())
        .fold(0.0, f64::max);

    let row_dev = w
        .rows()
        .into_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);

    let sym = (w + &w.t()) * 0.5;
    let eig = symmetric_eigenvalues(&sym);
    let lo = *eig.last().unwrap_or(&0.0);
    let hi = *eig.first().unwrap_or(&0.0);
    let spectrum_violation = (-lo).max(hi - 1.0).max(0.0);

    let second = eig.get(1).copied().unwrap_or(f64::NEG_INFINITY);
    let simple_violation = (second - (1.0 - SPECTRAL_TOL)).max(0.0);

    GossipReport {
        symmetric: Check {
            passed: asym == 0.0,
            violation: asym,
        },
        row_stochastic: Check {
            passed: row_dev <= ROW_SUM_TOL,
            violation: row_dev,
        },
        spectrum_in_unit_interval: Check {
            passed: spectrum_violation <= SPECTRAL_TOL,
            violation: spectrum_violation,
        },
        simple_unit_eigenvalue: Check {
            passed: second < 1.0 - SPECTRAL_TOL,
            violation: simple_violation,
        },
    }
}
