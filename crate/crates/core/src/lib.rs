//! Simulator for decentralized composite convex optimization.
//!
//! Agents on an undirected graph jointly minimize
//! `h(x) = (1/(mn)) sum_{i,j} f_{i,j}(x) + r(x)` using only neighbour
//! averaging. The main algorithms combine variance-reduced local gradient
//! estimators (SAGA or loopless SVRG), gradient tracking, and Chebyshev
//! accelerated multi-round gossip, followed by a proximal step.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod centralized;
pub mod config;
pub mod consensus;
pub mod data;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod metrics;
pub mod problems;
pub mod topology;

pub use algorithms::{Algorithm, RunConfig};
pub use config::ExperimentConfig;
pub use consensus::{AgentField, CommBudget};
pub use data::Dataset;
pub use error::{Error, Result};
pub use metrics::{DiagnosticsRow, Reference, RunRecord};
pub use problems::{AgentData, LossKind, Problem, Regularizer};
pub use topology::{Adjacency, GossipMatrix};
