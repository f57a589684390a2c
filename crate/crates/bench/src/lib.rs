//! Fixtures shared by the criterion benches.

use pmgt_core::data::{partition, synthetic_classification, PartitionScheme};
use pmgt_core::problems::logistic_problem;
use pmgt_core::{Adjacency, GossipMatrix, Problem, Regularizer};

/// A logistic problem on an Erdős–Rényi graph, sized like the small experiments.
pub struct Fixture {
    pub problem: Problem,
    pub gossip: GossipMatrix,
}

pub fn fixture(m: usize, n: usize, d: usize) -> Fixture {
    let data = synthetic_classification(m * n, d, 0.05, 7).expect("synthetic data");
    let agents = partition(&data, m, PartitionScheme::Shuffled { seed: 0 }).expect("partition");
    let problem = logistic_problem(agents, 1e-3)
        .expect("problem")
        .with_regularizer(Regularizer::L1 { scale: 1e-3 });
    let adj = Adjacency::erdos_renyi(m, 0.3, 1).expect("connected graph");
    let gossip = GossipMatrix::from_laplacian(&adj).expect("gossip");
    Fixture { problem, gossip }
}
