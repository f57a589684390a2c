//! Experiment configuration (TOML, strict: unknown keys are rejected).
//!
//! ```toml
//! [problem]
//! loss = "least_squares"
//! sigma = 0.05
//! regularizer = { kind = "l1", scale = 0.01 }
//! partition = { kind = "shuffled", seed = 0 }
//! data = { source = "regression", samples = 200, d = 10, noise = 0.1, seed = 1 }
//!
//! [topology]
//! kind = "ring"
//! m = 4
//!
//! [run]
//! algorithms = ["pmgt_saga", "dsgd"]
//! iterations = 200
//! seed = 7
//! tau = [250.0]
//! output_dir = "out"
//!
//! [reference]
//! enabled = true
//! tol = 1e-10
//! ```

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::algorithms::{Algorithm, RunConfig};
use crate::data::{self, Dataset, PartitionScheme};
use crate::error::{Error, Result};
use crate::problems::{least_squares_problem, logistic_problem, LossKind, Problem, Regularizer};
use crate::topology::{Adjacency, GossipMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub topology: TopologyConfig,
    pub run: RunBlock,
    #[serde(default)]
    pub reference: ReferenceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub loss: LossKind,
    pub sigma: f64,
    #[serde(default)]
    pub regularizer: Regularizer,
    #[serde(default)]
    pub partition: PartitionScheme,
    pub data: DataConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Libsvm {
        path: PathBuf,
        d: Option<usize>,
    },
    Regression {
        samples: usize,
        d: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Classification {
        samples: usize,
        d: usize,
        #[serde(default)]
        flip: f64,
        #[serde(default)]
        seed: u64,
    },
    SparseBinary {
        samples: usize,
        d: usize,
        nnz: usize,
        #[serde(default)]
        flip: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyConfig {
    Complete {
        m: usize,
    },
    Ring {
        m: usize,
    },
    Path {
        m: usize,
    },
    Exp2Ring {
        m: usize,
    },
    ErdosRenyi {
        m: usize,
        edge_prob: f64,
        seed: u64,
    },
    /// Row-major gossip matrix, used as given after validation.
    CustomMatrix {
        matrix: Vec<Vec<f64>>,
    },
}

impl TopologyConfig {
    pub fn m(&self) -> usize {
        match self {
            TopologyConfig::Complete { m }
            | TopologyConfig::Ring { m }
            | TopologyConfig::Path { m }
            | TopologyConfig::Exp2Ring { m }
            | TopologyConfig::ErdosRenyi { m, .. } => *m,
            TopologyConfig::CustomMatrix { matrix } => matrix.len(),
        }
    }

    pub fn build(&self) -> Result<GossipMatrix> {
        match self {
            TopologyConfig::Complete { m } => {
                GossipMatrix::from_laplacian(&Adjacency::complete(*m)?)
            }
            TopologyConfig::Ring { m } => GossipMatrix::from_laplacian(&Adjacency::ring(*m)?),
            TopologyConfig::Path { m } => GossipMatrix::from_laplacian(&Adjacency::path(*m)?),
            TopologyConfig::Exp2Ring { m } => {
                if *m == 0 {
                    return Err(Error::InvalidTopology("need at least one agent".into()));
                }
                Ok(GossipMatrix::exp2_ring(*m))
            }
            TopologyConfig::ErdosRenyi { m, edge_prob, seed } => {
                GossipMatrix::from_laplacian(&Adjacency::erdos_renyi(*m, *edge_prob, *seed)?)
            }
            TopologyConfig::CustomMatrix { matrix } => {
                let m = matrix.len();
                if m == 0 || matrix.iter().any(|r| r.len() != m) {
                    return Err(Error::InvalidTopology(
                        "custom matrix must be square and non-empty".into(),
                    ));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                let w = Array2::from_shape_vec((m, m), flat).expect("square shape checked above");
                GossipMatrix::from_weights(w)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub algorithms: Vec<Algorithm>,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub batch: usize,
    pub eta: Option<f64>,
    pub k: Option<usize>,
    pub p: Option<f64>,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default = "default_tau")]
    pub tau: Vec<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn one() -> usize {
    1
}

fn default_tau() -> Vec<f64> {
    vec![250.0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

impl RunBlock {
    pub fn run_config(&self, algorithm: Algorithm) -> RunConfig {
        RunConfig {
            algorithm,
            eta: self.eta,
            k: self.k,
            p: self.p,
            iterations: self.iterations,
            seed: self.seed,
            batch: self.batch,
            record_every: self.record_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default = "enabled")]
    pub enabled: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn enabled() -> bool {
    true
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            tol: default_tol(),
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate. Relative dataset paths resolve against the
    /// directory holding the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let DataConfig::Libsvm { path: data, .. } = &mut config.problem.data {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Parse without touching the filesystem.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.problem.sigma >= 0.0 && self.problem.sigma.is_finite()) {
            return bad(format!(
                "sigma must be non-negative, got {}",
                self.problem.sigma
            ));
        }
        if let Regularizer::L1 { scale } = self.problem.regularizer {
            if !(scale >= 0.0 && scale.is_finite()) {
                return bad(format!("l1 scale must be non-negative, got {scale}"));
            }
        }
        if let DataConfig::Libsvm { path, .. } = &self.problem.data {
            if !path.is_file() {
                return bad(format!("dataset {} does not exist", path.display()));
            }
        }
        if self.topology.m() == 0 {
            return bad("topology needs at least one agent".into());
        }
        if self.run.algorithms.is_empty() {
            return bad("run.algorithms is empty".into());
        }
        if self.run.tau.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return bad("tau values must be non-negative".into());
        }
        if !(self.reference.tol > 0.0) {
            return bad("reference.tol must be positive".into());
        }
        self.run
            .run_config(self.run.algorithms[0])
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.problem.data {
            DataConfig::Libsvm { path, d } => data::parse_libsvm(path, *d),
            DataConfig::Regression {
                samples,
                d,
                noise,
                seed,
            } => data::synthetic_regression(*samples, *d, *noise, *seed),
            DataConfig::Classification {
                samples,
                d,
                flip,
                seed,
            } => data::synthetic_classification(*samples, *d, *flip, *seed),
            DataConfig::SparseBinary {
                samples,
                d,
                nnz,
                flip,
                seed,
            } => data::synthetic_sparse_binary(*samples, *d, *nnz, *flip, *seed),
        }
    }

    pub fn build_problem(&self, dataset: &Dataset) -> Result<Problem> {
        let agents = data::partition(dataset, self.topology.m(), self.problem.partition)?;
        let problem = match self.problem.loss {
            LossKind::Logistic => logistic_problem(agents, self.problem.sigma)?,
            LossKind::LeastSquares => least_squares_problem(agents, self.problem.sigma)?,
        };
        Ok(problem.with_regularizer(self.problem.regularizer))
    }
}
