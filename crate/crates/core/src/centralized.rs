//! Single-machine proximal SAGA and loopless SVRG on the pooled problem.
//!
//! These are written independently of the decentralized drivers and serve as
//! the single-agent baseline.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::algorithms::{Algorithm, RunConfig, RunFailure};
use crate::consensus::AgentField;
use crate::error::{Error, Result};
use crate::estimators::{agent_rng, sample_indices};
use crate::metrics::{
    lyapunov, DiagnosticsRow, ProblemSummary, Reference, RunRecord, StarGradients,
};
use crate::problems::Problem;

#[derive(Debug, Clone)]
enum Memory {
    /// Stored component gradients and their mean.
    Saga {
        table: Array2<f64>,
        mean: Array1<f64>,
    },
    /// Anchor point, its full gradient, refresh probability.
    Lsvrg {
        anchor: Array1<f64>,
        full: Array1<f64>,
        p: f64,
    },
}

/// Iterate `x <- prox_{eta r}(x - eta v)` with a variance-reduced `v`.
#[derive(Debug, Clone)]
pub struct Centralized {
    problem: Problem,
    eta: f64,
    batch: usize,
    x: Array1<f64>,
    memory: Memory,
    rng: ChaCha8Rng,
    t: usize,
    grad_evals: u64,
}

impl Centralized {
    /// Starts at `x = 0` with memory anchored there. `problem` is pooled first.
    pub fn new(problem: &Problem, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let pooled = problem.pooled();
        let (n, d) = (pooled.n(), pooled.d());
        if config.batch > n {
            return Err(Error::InvalidInput(format!(
                "batch {} exceeds the pooled sample count {n}",
                config.batch
            )));
        }
        let x = Array1::zeros(d);
        let memory = match config.algorithm {
            Algorithm::CentralizedSaga => {
                let mut table = Array2::zeros((n, d));
                for j in 0..n {
                    pooled.add_component_grad(0, j, x.view(), 1.0, table.row_mut(j));
                }
                let mean = table.sum_axis(ndarray::Axis(0)) / n as f64;
                Memory::Saga { table, mean }
            }
            Algorithm::CentralizedLsvrg => Memory::Lsvrg {
                anchor: x.clone(),
                full: pooled.local_grad(0, x.view()),
                p: config.p.unwrap_or(1.0 / n as f64),
            },
            other => {
                return Err(Error::InvalidInput(format!(
                    "{other} is not a centralized method"
                )));
            }
        };
        Ok(Self {
            eta: config.eta.unwrap_or(1.0 / (12.0 * pooled.lipschitz())),
            batch: config.batch,
            x,
            memory,
            rng: agent_rng(config.seed, 0),
            t: 0,
            grad_evals: n as u64,
            problem: pooled,
        })
    }

    pub fn x(&self) -> &Array1<f64> {
        &self.x
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn grad_evals(&self) -> u64 {
        self.grad_evals
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn step(&mut self) -> Result<()> {
        let n = self.problem.n();
        let indices = sample_indices(&mut self.rng, n, self.batch);
        let scale = 1.0 / indices.len() as f64;
        let x = self.x.view();
        let v = match &mut self.memory {
            Memory::Saga { table, mean } => {
                let mut v = mean.clone();
                let mut fresh = Array2::zeros((indices.len(), self.problem.d()));
                for (k, &j) in indices.iter().enumerate() {
                    self.problem
                        .add_component_grad(0, j, x, 1.0, fresh.row_mut(k));
                    v.scaled_add(scale, &fresh.row(k));
                    v.scaled_add(-scale, &table.row(j));
                }
                for (k, &j) in indices.iter().enumerate() {
                    mean.scaled_add(1.0 / n as f64, &fresh.row(k));
                    mean.scaled_add(-1.0 / n as f64, &table.row(j));
                    table.row_mut(j).assign(&fresh.row(k));
                }
                self.grad_evals += indices.len() as u64;
                v
            }
            Memory::Lsvrg { anchor, full, p } => {
                let mut v = full.clone();
                for &j in &indices {
                    self.problem
                        .add_component_grad(0, j, x, scale, v.view_mut());
                    self.problem
                        .add_component_grad(0, j, anchor.view(), -scale, v.view_mut());
                }
                self.grad_evals += 2 * indices.len() as u64;
                if self.rng.random::<f64>() < *p {
                    anchor.assign(&x);
                    *full = self.problem.local_grad(0, x);
                    self.grad_evals += n as u64;
                }
                v
            }
        };
        let mut next = &self.x - &(self.eta * &v);
        self.problem
            .regularizer()
            .prox_in_place(next.view_mut(), self.eta);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Run {
                algorithm: "centralized".into(),
                iteration: self.t,
                source: Box::new(Error::NumericalFailure {
                    context: "centralized iterate".into(),
                    round: 0,
                }),
            });
        }
        self.x = next;
        self.t += 1;
        Ok(())
    }

    /// `(1/N) sum_j ||table_j - grad f_j(x*)||^2` for SAGA, the analogous
    /// anchor-based quantity for LSVRG.
    pub fn delta(&self, star: &StarGradients) -> f64 {
        let table = star.table(0);
        let n = self.problem.n();
        let mut total = 0.0;
        for j in 0..n {
            let g = match &self.memory {
                Memory::Saga { table, .. } => table.row(j).to_owned(),
                Memory::Lsvrg { anchor, .. } => self.problem.component_grad(0, j, anchor.view()),
            };
            let diff = &g - &table.row(j);
            total += diff.dot(&diff);
        }
        total / n as f64
    }

    fn diagnose(
        &self,
        reference: Option<&Reference>,
        pooled_star: Option<&StarGradients>,
    ) -> DiagnosticsRow {
        let h = self.problem.composite_value(self.x.view());
        let (subopt, dist_sq, delta, lyap) = match (reference, pooled_star) {
            (Some(r), Some(star)) => {
                let diff = &self.x - r.x_star();
                let delta = self.delta(star);
                let lyap = lyapunov(
                    self.x.view(),
                    r.x_star().view(),
                    delta,
                    self.eta,
                    self.problem.n(),
                );
                (
                    h - r.h_star(),
                    Some(diff.dot(&diff)),
                    Some(delta),
                    Some(lyap),
                )
            }
            _ => (h, None, None, None),
        };
        DiagnosticsRow {
            t: self.t,
            consensus_x: 0.0,
            consensus_s: None,
            tracking_err: None,
            delta,
            lyapunov: lyap,
            subopt,
            dist_sq,
            grad_evals: self.grad_evals,
            comm_rounds: 0,
        }
    }

    fn summary(&self) -> ProblemSummary {
        let p = match self.memory {
            Memory::Lsvrg { p, .. } => Some(p),
            Memory::Saga { .. } => None,
        };
        ProblemSummary {
            m: 1,
            n: self.problem.n(),
            d: self.problem.d(),
            lipschitz: self.problem.lipschitz(),
            mu: self.problem.mu(),
            kappa: self.problem.lipschitz() / self.problem.mu(),
            lambda2: 0.0,
            k: 0,
            eta: self.eta,
            p,
        }
    }

    fn record(&self, config: &RunConfig, rows: Vec<DiagnosticsRow>) -> RunRecord {
        RunRecord {
            algorithm: config.algorithm,
            config: config.clone(),
            summary: self.summary(),
            rows,
            final_x: AgentField::consensual(1, self.x.view()),
        }
    }
}

/// Run a centralized method; diagnostics use the same schema as the
/// decentralized drivers with `consensus_x = 0` and `comm_rounds = 0`.
pub fn run(
    problem: &Problem,
    config: &RunConfig,
    reference: Option<&Reference>,
) -> std::result::Result<RunRecord, Box<RunFailure>> {
    let mut solver = Centralized::new(problem, config).map_err(|error| {
        Box::new(RunFailure {
            partial: RunRecord {
                algorithm: config.algorithm,
                config: config.clone(),
                summary: ProblemSummary {
                    m: 1,
                    n: problem.m() * problem.n(),
                    d: problem.d(),
                    lipschitz: problem.lipschitz(),
                    mu: problem.mu(),
                    kappa: problem.lipschitz() / problem.mu(),
                    lambda2: 0.0,
                    k: 0,
                    eta: 0.0,
                    p: None,
                },
                rows: Vec::new(),
                final_x: AgentField::zeros(1, problem.d()),
            },
            error,
        })
    })?;
    let star = reference.map(|r| r.star.pooled());
    let mut rows = vec![solver.diagnose(reference, star.as_ref())];
    for _ in 0..config.iterations {
        if let Err(error) = solver.step() {
            return Err(Box::new(RunFailure {
                partial: solver.record(config, rows),
                error,
            }));
        }
        if solver.t % config.record_every == 0 || solver.t == config.iterations {
            rows.push(solver.diagnose(reference, star.as_ref()));
        }
    }
    Ok(solver.record(config, rows))
}
