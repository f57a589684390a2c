#![allow(dead_code)]

use pmgt_core::data::{partition, synthetic_classification, synthetic_regression, PartitionScheme};
use pmgt_core::problems::{least_squares_problem, logistic_problem};
use pmgt_core::{AgentData, GossipMatrix, Problem, Regularizer};

/// Least-squares agents with `sigma` picked so that `L / mu = kappa`.
pub fn least_squares_with_kappa(agents: Vec<AgentData>, kappa: f64) -> Problem {
    let bare = least_squares_problem(agents.clone(), 0.0).unwrap();
    let (l0, mu0) = (bare.lipschitz(), bare.mu());
    let sigma = (l0 - kappa * mu0) / (kappa - 1.0);
    assert!(
        sigma >= 0.0,
        "kappa {kappa} is below the data's own conditioning {}",
        l0 / mu0
    );
    least_squares_problem(agents, sigma).unwrap()
}

/// m = 4 agents on the complete graph, n = 50, d = 10, least squares with
/// kappa = 10 and `0.01 ||x||_1`.
pub fn testbed() -> (Problem, GossipMatrix) {
    testbed_with(4, 50, 10.0, 0)
}

pub fn testbed_with(m: usize, n: usize, kappa: f64, seed: u64) -> (Problem, GossipMatrix) {
    let ds = synthetic_regression(m * n, 10, 0.1, 100 + seed).unwrap();
    let agents = partition(&ds, m, PartitionScheme::Contiguous).unwrap();
    let problem =
        least_squares_with_kappa(agents, kappa).with_regularizer(Regularizer::L1 { scale: 0.01 });
    let gossip = GossipMatrix::from_laplacian(&pmgt_core::Adjacency::complete(m).unwrap()).unwrap();
    (problem, gossip)
}

/// Same data on a ring, where the mixing rate is positive.
pub fn ring_testbed(m: usize, n: usize, kappa: f64) -> (Problem, GossipMatrix) {
    let (problem, _) = testbed_with(m, n, kappa, 0);
    let gossip = GossipMatrix::from_laplacian(&pmgt_core::Adjacency::ring(m).unwrap()).unwrap();
    (problem, gossip)
}

/// Logistic agents with label-sorted (disjoint, skewed) local data.
pub fn heterogeneous_logistic(m: usize, n: usize, d: usize, sigma: f64) -> Problem {
    let ds = synthetic_classification(m * n, d, 0.05, 11).unwrap();
    let agents = partition(&ds, m, PartitionScheme::SortedByLabel).unwrap();
    logistic_problem(agents, sigma).unwrap()
}

/// Least-squares fit of `ln y` against `t`; returns `exp(slope)`.
pub fn geometric_rate(ts: &[f64], ys: &[f64]) -> f64 {
    log_slope(ts, ys).exp()
}

pub fn log_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let tm = ts.iter().sum::<f64>() / n;
    let lm = logs.iter().sum::<f64>() / n;
    let cov: f64 = ts.iter().zip(&logs).map(|(t, l)| (t - tm) * (l - lm)).sum();
    let var: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
    cov / var
}
