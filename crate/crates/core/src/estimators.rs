//! Local stochastic gradient estimators and the gradient-tracking update.
//!
//! Both variance-reduced estimators split into a pure `estimate` (given the
//! sampled indices) and a state update, so their expectation can be checked
//! by enumerating every index choice.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consensus::{fastmix, AgentField, CommBudget};
use crate::error::Result;
use crate::problems::Problem;
use crate::topology::GossipMatrix;

/// The random stream for one agent: ChaCha keyed by the master seed, with
/// the agent id as the stream number.
pub fn agent_rng(seed: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64);
    rng
}

/// One independent stream per agent.
#[derive(Debug, Clone)]
pub struct RngStreams {
    streams: Vec<ChaCha8Rng>,
}

impl RngStreams {
    pub fn new(seed: u64, m: usize) -> Self {
        Self {
            streams: (0..m).map(|i| agent_rng(seed, i)).collect(),
        }
    }

    pub fn agent(&mut self, agent: usize) -> &mut ChaCha8Rng {
        &mut self.streams[agent]
    }
}

/// `batch` distinct indices from `0..n`, uniformly.
pub fn sample_indices<R: Rng + ?Sized>(rng: &mut R, n: usize, batch: usize) -> Vec<usize> {
    debug_assert!(batch >= 1 && batch <= n);
    if batch == 1 {
        vec![rng.random_range(0..n)]
    } else {
        rand::seq::index::sample(rng, n, batch).into_vec()
    }
}

/// Per-agent SAGA memory: the stored component gradients and their mean.
#[derive(Debug, Clone)]
pub struct SagaState {
    tables: Vec<Array2<f64>>,
    means: Vec<Array1<f64>>,
}

impl SagaState {
    /// Fill every table at `x0` (row `i` for agent `i`). Costs `n` component
    /// gradients per agent.
    pub fn new(problem: &Problem, x0: &AgentField) -> Self {
        let tables: Vec<Array2<f64>> = (0..problem.m())
            .map(|i| problem.component_grads(i, x0.row(i)))
            .collect();
        let means = tables
            .iter()
            .map(|t| t.mean_axis(ndarray::Axis(0)).expect("n >= 1"))
            .collect();
        Self { tables, means }
    }

    pub fn table(&self, agent: usize) -> &Array2<f64> {
        &self.tables[agent]
    }

    pub fn table_mean(&self, agent: usize) -> &Array1<f64> {
        &self.means[agent]
    }

    /// Largest gap between the cached mean and a fresh recomputation.
    pub fn mean_drift(&self, agent: usize) -> f64 {
        let exact = self.tables[agent].mean_axis(ndarray::Axis(0)).unwrap();
        (&exact - &self.means[agent])
            .iter()
            .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    /// `v = (1/b) sum_k [grad f_{i,j_k}(x) - table[j_k]] + mean(table)`.
    /// Returns the estimate and the freshly evaluated gradients.
    pub fn estimate(
        &self,
        problem: &Problem,
        agent: usize,
        x: ArrayView1<f64>,
        indices: &[usize],
    ) -> (Array1<f64>, Array2<f64>) {
        let table = &self.tables[agent];
        let scale = 1.0 / indices.len() as f64;
        let mut fresh = Array2::zeros((indices.len(), problem.d()));
        let mut v = self.means[agent].clone();
        for (k, &j) in indices.iter().enumerate() {
            problem.add_component_grad(agent, j, x, 1.0, fresh.row_mut(k));
            v.scaled_add(scale, &fresh.row(k));
            v.scaled_add(-scale, &table.row(j));
        }
        (v, fresh)
    }

    /// Overwrite `table[j_k]` with the new gradients and update the mean.
    pub fn commit(&mut self, agent: usize, indices: &[usize], fresh: &Array2<f64>) {
        let n = self.tables[agent].nrows() as f64;
        let (table, mean) = (&mut self.tables[agent], &mut self.means[agent]);
        for (k, &j) in indices.iter().enumerate() {
            let new = fresh.row(k);
            mean.scaled_add(1.0 / n, &new);
            mean.scaled_add(-1.0 / n, &table.row(j));
            table.row_mut(j).assign(&new);
        }
    }

    /// Sample, estimate, commit. Returns `(v_i, component gradient evaluations)`.
    pub fn draw<R: Rng + ?Sized>(
        &mut self,
        problem: &Problem,
        agent: usize,
        x: ArrayView1<f64>,
        rng: &mut R,
        batch: usize,
    ) -> (Array1<f64>, u64) {
        let indices = sample_indices(rng, problem.n(), batch);
        let (v, fresh) = self.estimate(problem, agent, x, &indices);
        self.commit(agent, &indices, &fresh);
        (v, indices.len() as u64)
    }
}

/// Per-agent loopless-SVRG memory: reference point `w_i` and `grad f_i(w_i)`.
#[derive(Debug, Clone)]
pub struct LsvrgState {
    reference: Array2<f64>,
    full_grad: Array2<f64>,
    p: f64,
}

impl LsvrgState {
    /// Reference points at `x0`, with `grads` already holding `grad f_i(x0)`
    /// row by row (shared with the tracker initialisation).
    pub fn new(x0: &AgentField, grads: &AgentField, p: f64) -> Self {
        assert!(
            p > 0.0 && p <= 1.0,
            "refresh probability must lie in (0, 1]"
        );
        Self {
            reference: x0.values().clone(),
            full_grad: grads.values().clone(),
            p,
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn reference(&self, agent: usize) -> ArrayView1<'_, f64> {
        self.reference.row(agent)
    }

    pub fn full_grad(&self, agent: usize) -> ArrayView1<'_, f64> {
        self.full_grad.row(agent)
    }

    /// `v = (1/b) sum_k [grad f_{i,j_k}(x) - grad f_{i,j_k}(w_i)] + grad f_i(w_i)`.
    pub fn estimate(
        &self,
        problem: &Problem,
        agent: usize,
        x: ArrayView1<f64>,
        indices: &[usize],
    ) -> Array1<f64> {
        let w = self.reference.row(agent);
        let scale = 1.0 / indices.len() as f64;
        let mut v = self.full_grad.row(agent).to_owned();
        for &j in indices {
            problem.add_component_grad(agent, j, x, scale, v.view_mut());
            problem.add_component_grad(agent, j, w, -scale, v.view_mut());
        }
        v
    }

    /// `w_i <- x`, recompute `grad f_i(w_i)`. Costs `n` evaluations.
    pub fn refresh(&mut self, problem: &Problem, agent: usize, x: ArrayView1<f64>) -> u64 {
        self.reference.row_mut(agent).assign(&x);
        self.full_grad
            .row_mut(agent)
            .assign(&problem.local_grad(agent, x));
        problem.n() as u64
    }

    /// Estimate with the current reference point, then refresh it with
    /// probability `p`. The order matters: the estimate never sees the new
    /// reference point.
    pub fn draw<R: Rng + ?Sized>(
        &mut self,
        problem: &Problem,
        agent: usize,
        x: ArrayView1<f64>,
        rng: &mut R,
        batch: usize,
    ) -> (Array1<f64>, u64) {
        let indices = sample_indices(rng, problem.n(), batch);
        let v = self.estimate(problem, agent, x, &indices);
        let mut evals = 2 * indices.len() as u64;
        if rng.random::<f64>() < self.p {
            evals += self.refresh(problem, agent, x);
        }
        (v, evals)
    }
}

/// Plain minibatch stochastic gradient.
pub fn sgd_draw<R: Rng + ?Sized>(
    problem: &Problem,
    agent: usize,
    x: ArrayView1<f64>,
    rng: &mut R,
    batch: usize,
) -> (Array1<f64>, u64) {
    let indices = sample_indices(rng, problem.n(), batch);
    let scale = 1.0 / indices.len() as f64;
    let mut v = Array1::zeros(problem.d());
    for &j in &indices {
        problem.add_component_grad(agent, j, x, scale, v.view_mut());
    }
    (v, indices.len() as u64)
}

/// Exact local gradient `grad f_i(x)`; costs `n` evaluations.
pub fn full_gradient(problem: &Problem, agent: usize, x: ArrayView1<f64>) -> (Array1<f64>, u64) {
    (problem.local_grad(agent, x), problem.n() as u64)
}

/// `s_new = FastMix(s_prev + v_new - v_prev, K)`.
pub fn track_gradients(
    s_prev: &AgentField,
    v_new: &AgentField,
    v_prev: &AgentField,
    w: &GossipMatrix,
    k: usize,
    budget: &mut CommBudget,
) -> Result<AgentField> {
    let mut pre = s_prev.values() + v_new.values();
    pre -= v_prev.values();
    fastmix(&AgentField::from_raw(pre), w, k, budget)
}
