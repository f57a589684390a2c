//! Iteration drivers.
//!
//! One iteration of the variance-reduced gradient-tracking method:
//!
//! 1. every agent draws its local estimator `v_i^t` at `x_i^t`;
//! 2. `s^t = FastMix(s^{t-1} + v^t - v^{t-1}, K)`;
//! 3. `x^{t+1} = FastMix(prox_{eta, r}(x^t - eta s^t) row-wise, K)`.
//!
//! That costs exactly `2K` gossip rounds. The DSGD and GT-DSGD baselines use
//! a single plain gossip round for each mixed quantity instead.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::centralized;
use crate::consensus::{fastmix, gossip_once, resolve_k, AgentField, CommBudget};
use crate::error::{Error, Result};
use crate::estimators::{
    full_gradient, sample_indices, sgd_draw, track_gradients, LsvrgState, RngStreams, SagaState,
};
use crate::metrics::{
    delta_lsvrg, delta_saga, diagnose, ProblemSummary, Reference, RunRecord, Snapshot,
};
use crate::problems::{aggregated_prox, Problem};
use crate::topology::GossipMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    PmgtSaga,
    PmgtLsvrg,
    Dsgd,
    GtDsgd,
    DecentralizedProxFullgrad,
    CentralizedSaga,
    CentralizedLsvrg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::PmgtSaga,
        Algorithm::PmgtLsvrg,
        Algorithm::Dsgd,
        Algorithm::GtDsgd,
        Algorithm::DecentralizedProxFullgrad,
        Algorithm::CentralizedSaga,
        Algorithm::CentralizedLsvrg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::PmgtSaga => "pmgt_saga",
            Algorithm::PmgtLsvrg => "pmgt_lsvrg",
            Algorithm::Dsgd => "dsgd",
            Algorithm::GtDsgd => "gt_dsgd",
            Algorithm::DecentralizedProxFullgrad => "decentralized_prox_fullgrad",
            Algorithm::CentralizedSaga => "centralized_saga",
            Algorithm::CentralizedLsvrg => "centralized_lsvrg",
        }
    }

    pub fn is_centralized(&self) -> bool {
        matches!(
            self,
            Algorithm::CentralizedSaga | Algorithm::CentralizedLsvrg
        )
    }

    /// Whether the method mixes with FastMix (and therefore uses `K`).
    pub fn uses_multi_consensus(&self) -> bool {
        matches!(
            self,
            Algorithm::PmgtSaga | Algorithm::PmgtLsvrg | Algorithm::DecentralizedProxFullgrad
        )
    }

    pub fn uses_refresh_probability(&self) -> bool {
        matches!(self, Algorithm::PmgtLsvrg | Algorithm::CentralizedLsvrg)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown algorithm {s:?}")))
    }
}

/// Hyperparameters for one run. `None` fields take their defaults:
/// `eta = 1/(12L)`, `K` from [`crate::consensus::choose_k`], `p = 1/n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub eta: Option<f64>,
    pub k: Option<usize>,
    pub p: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
    pub batch: usize,
    pub record_every: usize,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, iterations: usize) -> Self {
        Self {
            algorithm,
            eta: None,
            k: None,
            p: None,
            iterations,
            seed: 0,
            batch: 1,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "eta must be positive, got {eta}"
                )));
            }
        }
        if let Some(p) = self.p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "p must lie in (0, 1], got {p}"
                )));
            }
        }
        if self.k == Some(0) {
            return Err(Error::InvalidInput("K must be positive".into()));
        }
        if self.batch == 0 || self.record_every == 0 {
            return Err(Error::InvalidInput(
                "batch and record_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fully resolved step parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub eta: f64,
    pub k: usize,
    pub p: f64,
    pub batch: usize,
}

impl Params {
    pub fn resolve(config: &RunConfig, problem: &Problem, w: &GossipMatrix) -> Result<Self> {
        config.validate()?;
        if config.batch > problem.n() {
            return Err(Error::InvalidInput(format!(
                "batch {} exceeds the per-agent sample count {}",
                config.batch,
                problem.n()
            )));
        }
        let kappa = problem.condition_number()?;
        let k = if config.algorithm.uses_multi_consensus() {
            resolve_k(config.k, w.mixing_rate(), kappa, problem.n())?
        } else {
            1
        };
        Ok(Self {
            eta: config.eta.unwrap_or(1.0 / (12.0 * problem.lipschitz())),
            k,
            p: config.p.unwrap_or(1.0 / problem.n() as f64),
            batch: config.batch,
        })
    }
}

#[derive(Debug, Clone)]
pub enum EstimatorState {
    Saga(SagaState),
    Lsvrg(LsvrgState),
    Sgd,
    Full,
}

/// Everything that evolves across iterations. After `t` steps, `x` holds
/// `x^t`, while `s` and `v_prev` hold `s^{t-1}` and `v^{t-1}`.
#[derive(Debug, Clone)]
pub struct IterationState {
    pub t: usize,
    pub x: AgentField,
    pub s: AgentField,
    pub v_prev: AgentField,
    pub estimator: EstimatorState,
    pub budget: CommBudget,
    pub grad_evals: u64,
    pub rngs: RngStreams,
}

/// A decentralized method bound to a problem and a gossip matrix.
#[derive(Debug, Clone)]
pub struct Decentralized<'a> {
    problem: &'a Problem,
    gossip: &'a GossipMatrix,
    algorithm: Algorithm,
    params: Params,
}

impl<'a> Decentralized<'a> {
    pub fn new(problem: &'a Problem, gossip: &'a GossipMatrix, config: &RunConfig) -> Result<Self> {
        let params = Params::resolve(config, problem, gossip)?;
        Self::with_params(problem, gossip, config.algorithm, params)
    }

    /// Bypasses config validation (e.g. `eta = 0`).
    pub fn with_params(
        problem: &'a Problem,
        gossip: &'a GossipMatrix,
        algorithm: Algorithm,
        params: Params,
    ) -> Result<Self> {
        if algorithm.is_centralized() {
            return Err(Error::InvalidInput(format!(
                "{algorithm} is not a decentralized method"
            )));
        }
        if gossip.m() != problem.m() {
            return Err(Error::DimensionMismatch(format!(
                "problem has {} agents, gossip matrix has {}",
                problem.m(),
                gossip.m()
            )));
        }
        Ok(Self {
            problem,
            gossip,
            algorithm,
            params,
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    /// `x^0 = 0` on every agent, `v^{-1} = s^{-1} = grad F(x^0)`, estimator
    /// memory anchored at `x^0`. The `n` component gradients per agent are
    /// shared between the tracker and the estimator and counted once.
    pub fn init_state(&self, seed: u64) -> IterationState {
        let (m, d) = (self.problem.m(), self.problem.d());
        let x = AgentField::zeros(m, d);
        let (estimator, grads) = match self.algorithm {
            Algorithm::PmgtSaga => {
                let saga = SagaState::new(self.problem, &x);
                let mut g = Array2::zeros((m, d));
                for i in 0..m {
                    g.row_mut(i).assign(saga.table_mean(i));
                }
                (EstimatorState::Saga(saga), AgentField::from_raw(g))
            }
            other => {
                let mut g = Array2::zeros((m, d));
                for i in 0..m {
                    g.row_mut(i).assign(&self.problem.local_grad(i, x.row(i)));
                }
                let g = AgentField::from_raw(g);
                let est = match other {
                    Algorithm::PmgtLsvrg => {
                        EstimatorState::Lsvrg(LsvrgState::new(&x, &g, self.params.p))
                    }
                    Algorithm::DecentralizedProxFullgrad => EstimatorState::Full,
                    _ => EstimatorState::Sgd,
                };
                (est, g)
            }
        };
        IterationState {
            t: 0,
            x,
            s: grads.clone(),
            v_prev: grads,
            estimator,
            budget: CommBudget::new(),
            grad_evals: (m * self.problem.n()) as u64,
            rngs: RngStreams::new(seed, m),
        }
    }

    fn draw_estimates(&self, state: &mut IterationState, at: &AgentField) -> AgentField {
        let (problem, batch) = (self.problem, self.params.batch);
        let mut v = Array2::zeros((problem.m(), problem.d()));
        for i in 0..problem.m() {
            let rng = state.rngs.agent(i);
            let (vi, evals) = match &mut state.estimator {
                EstimatorState::Saga(s) => s.draw(problem, i, at.row(i), rng, batch),
                EstimatorState::Lsvrg(s) => s.draw(problem, i, at.row(i), rng, batch),
                EstimatorState::Sgd => sgd_draw(problem, i, at.row(i), rng, batch),
                EstimatorState::Full => full_gradient(problem, i, at.row(i)),
            };
            v.row_mut(i).assign(&vi);
            state.grad_evals += evals;
        }
        AgentField::from_raw(v)
    }

    /// Advance by one iteration.
    pub fn step(&self, state: &mut IterationState) -> Result<()> {
        match self.algorithm {
            Algorithm::Dsgd => self.dsgd_step(state),
            Algorithm::GtDsgd => self.gt_dsgd_step(state),
            _ => self.pmgt_step(state),
        }
        .map_err(|e| Error::Run {
            algorithm: self.algorithm.name().into(),
            iteration: state.t,
            source: Box::new(e),
        })
    }

    fn pmgt_step(&self, state: &mut IterationState) -> Result<()> {
        let Params { eta, k, .. } = self.params;
        let x = state.x.clone();
        let v = self.draw_estimates(state, &x);
        let s = track_gradients(
            &state.s,
            &v,
            &state.v_prev,
            self.gossip,
            k,
            &mut state.budget,
        )?;
        let mut descent = x.into_inner();
        descent.scaled_add(-eta, s.values());
        let proxed = aggregated_prox(
            &AgentField::from_raw(descent),
            eta,
            self.problem.regularizer(),
        );
        state.x = fastmix(&proxed, self.gossip, k, &mut state.budget)?;
        state.s = s;
        state.v_prev = v;
        state.t += 1;
        Ok(())
    }

    /// `x^{t+1} = prox(W x^t - eta v^t)` with `v^t` a local stochastic gradient.
    fn dsgd_step(&self, state: &mut IterationState) -> Result<()> {
        let eta = self.params.eta;
        let x = state.x.clone();
        let v = self.draw_estimates(state, &x);
        let mut mixed = gossip_once(&x, self.gossip, &mut state.budget)?.into_inner();
        mixed.scaled_add(-eta, v.values());
        state.x = aggregated_prox(
            &AgentField::from_raw(mixed),
            eta,
            self.problem.regularizer(),
        );
        state.x.ensure_finite("dsgd", 1)?;
        state.v_prev = v;
        state.t += 1;
        Ok(())
    }

    /// `x^{t+1} = prox(W x^t - eta s^t)`, then
    /// `s^{t+1} = W s^t + v^{t+1} - v^t` with `v^{t+1}` drawn at `x^{t+1}`.
    /// Here `s` and `v_prev` hold `s^t` and `v^t` (not `t - 1`).
    fn gt_dsgd_step(&self, state: &mut IterationState) -> Result<()> {
        let eta = self.params.eta;
        let mut mixed = gossip_once(&state.x, self.gossip, &mut state.budget)?.into_inner();
        mixed.scaled_add(-eta, state.s.values());
        let x_next = aggregated_prox(
            &AgentField::from_raw(mixed),
            eta,
            self.problem.regularizer(),
        );
        let v_next = self.draw_estimates(state, &x_next);
        let mut s_next = gossip_once(&state.s, self.gossip, &mut state.budget)?.into_inner();
        s_next += v_next.values();
        s_next -= state.v_prev.values();
        let s_next = AgentField::from_raw(s_next);
        s_next.ensure_finite("gt_dsgd tracker", 1)?;
        x_next.ensure_finite("gt_dsgd iterate", 1)?;
        state.x = x_next;
        state.s = s_next;
        state.v_prev = v_next;
        state.t += 1;
        Ok(())
    }

    /// The tracker `s^t` that the next step will form at the current `x^t`.
    /// Uses copies of the random streams and leaves the estimator memory and
    /// counters untouched, so the trajectory is unaffected.
    pub fn peek_tracker(&self, state: &IterationState) -> Result<AgentField> {
        let (problem, batch) = (self.problem, self.params.batch);
        let mut rngs = state.rngs.clone();
        let mut v = Array2::zeros((problem.m(), problem.d()));
        for i in 0..problem.m() {
            let x = state.x.row(i);
            let vi = match &state.estimator {
                EstimatorState::Saga(s) => {
                    s.estimate(
                        problem,
                        i,
                        x,
                        &sample_indices(rngs.agent(i), problem.n(), batch),
                    )
                    .0
                }
                EstimatorState::Lsvrg(s) => s.estimate(
                    problem,
                    i,
                    x,
                    &sample_indices(rngs.agent(i), problem.n(), batch),
                ),
                EstimatorState::Sgd => sgd_draw(problem, i, x, rngs.agent(i), batch).0,
                EstimatorState::Full => problem.local_grad(i, x),
            };
            v.row_mut(i).assign(&vi);
        }
        let v = AgentField::from_raw(v);
        track_gradients(
            &state.s,
            &v,
            &state.v_prev,
            self.gossip,
            self.params.k,
            &mut CommBudget::new(),
        )
    }

    /// The tracker paired with `x^t`, if the method has one.
    fn tracker_at(&self, state: &IterationState) -> Option<AgentField> {
        match self.algorithm {
            Algorithm::Dsgd => None,
            Algorithm::GtDsgd => Some(state.s.clone()),
            _ => self.peek_tracker(state).ok(),
        }
    }

    fn current_delta(&self, state: &IterationState, reference: Option<&Reference>) -> Option<f64> {
        let r = reference?;
        match &state.estimator {
            EstimatorState::Saga(s) => Some(delta_saga(s, &r.star)),
            EstimatorState::Lsvrg(s) => Some(delta_lsvrg(s, self.problem, &r.star)),
            _ => None,
        }
    }

    /// Diagnostics for `x^t`. The tracker columns use `s^t`, the tracker the
    /// next step forms at `x^t` (see [`Self::peek_tracker`]).
    pub fn diagnose(
        &self,
        state: &IterationState,
        reference: Option<&Reference>,
    ) -> crate::metrics::DiagnosticsRow {
        let tracker = self.tracker_at(state);
        diagnose(
            self.problem,
            reference,
            Snapshot {
                t: state.t,
                x: &state.x,
                s: tracker.as_ref(),
                delta: self.current_delta(state, reference),
                eta: self.params.eta,
                n: self.problem.n(),
                grad_evals: state.grad_evals,
                comm_rounds: state.budget.rounds(),
            },
        )
    }

    pub fn summary(&self) -> ProblemSummary {
        ProblemSummary {
            m: self.problem.m(),
            n: self.problem.n(),
            d: self.problem.d(),
            lipschitz: self.problem.lipschitz(),
            mu: self.problem.mu(),
            kappa: self.problem.lipschitz() / self.problem.mu(),
            lambda2: self.gossip.mixing_rate(),
            k: self.params.k,
            eta: self.params.eta,
            p: self
                .algorithm
                .uses_refresh_probability()
                .then_some(self.params.p),
        }
    }
}

/// A run that stopped early; `partial` holds every row recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct RunFailure {
    pub partial: RunRecord,
    #[source]
    pub error: Error,
}

/// Run `config.iterations` steps, recording diagnostics at `t = 0`, every
/// `record_every` iterations, and at the final iteration.
pub fn run(
    problem: &Problem,
    gossip: &GossipMatrix,
    config: &RunConfig,
    reference: Option<&Reference>,
) -> std::result::Result<RunRecord, Box<RunFailure>> {
    if config.algorithm.is_centralized() {
        return centralized::run(problem, config, reference);
    }
    let fail_early = |error: Error| {
        Box::new(RunFailure {
            partial: RunRecord {
                algorithm: config.algorithm,
                config: config.clone(),
                summary: ProblemSummary {
                    m: problem.m(),
                    n: problem.n(),
                    d: problem.d(),
                    lipschitz: problem.lipschitz(),
                    mu: problem.mu(),
                    kappa: problem.lipschitz() / problem.mu(),
                    lambda2: gossip.mixing_rate(),
                    k: 0,
                    eta: 0.0,
                    p: None,
                },
                rows: Vec::new(),
                final_x: AgentField::zeros(problem.m(), problem.d()),
            },
            error,
        })
    };
    let solver = Decentralized::new(problem, gossip, config).map_err(fail_early)?;
    let mut state = solver.init_state(config.seed);
    let mut record = RunRecord {
        algorithm: config.algorithm,
        config: config.clone(),
        summary: solver.summary(),
        rows: vec![solver.diagnose(&state, reference)],
        final_x: state.x.clone(),
    };
    for _ in 0..config.iterations {
        if let Err(error) = solver.step(&mut state) {
            record.final_x = state.x.clone();
            return Err(Box::new(RunFailure {
                partial: record,
                error,
            }));
        }
        if state.t % config.record_every == 0 || state.t == config.iterations {
            record.rows.push(solver.diagnose(&state, reference));
        }
    }
    record.final_x = state.x;
    Ok(record)
}
