//! Finite-sum losses, regularizers with closed-form proximal maps, and a
//! centralized reference solver.
//!
//! The global objective is `h(x) = f(x) + r(x)` with
//! `f(x) = (1/m) sum_i f_i(x)` and `f_i(x) = (1/n) sum_j f_{i,j}(x)`.
//! Every component carries the ridge term `(sigma/2) ||x||^2`.

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1, Zip};
use serde::{Deserialize, Serialize};

use crate::consensus::AgentField;
use crate::error::{Error, Result};
use crate::topology::symmetric_eigenvalues;

/// Iteration cap for [`solve_reference`].
pub const REFERENCE_MAX_ITERS: usize = 10_000_000;

/// Samples owned by one agent: `features` is `n x d`, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentData {
    pub features: Array2<f64>,
    pub labels: Array1<f64>,
}

impl AgentData {
    pub fn new(features: Array2<f64>, labels: Array1<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    LeastSquares,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regularizer {
    #[default]
    None,
    L1 {
        scale: f64,
    },
}

impl Regularizer {
    pub fn value(&self, x: ArrayView1<f64>) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::L1 { scale } => scale * x.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    /// `argmin_z r(z) + ||z - x||^2 / (2 eta)`.
    pub fn prox(&self, x: ArrayView1<f64>, eta: f64) -> Array1<f64> {
        match *self {
            Regularizer::None => x.to_owned(),
            Regularizer::L1 { scale } => prox_l1(x, eta * scale),
        }
    }

    pub fn prox_in_place(&self, mut x: ArrayViewMut1<f64>, eta: f64) {
        if let Regularizer::L1 { scale } = *self {
            let threshold = eta * scale;
            x.mapv_inplace(|v| soft_threshold(v, threshold));
        }
    }
}

#[inline]
pub fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

/// Coordinate-wise soft thresholding.
pub fn prox_l1(x: ArrayView1<f64>, threshold: f64) -> Array1<f64> {
    debug_assert!(threshold >= 0.0);
    x.mapv(|v| soft_threshold(v, threshold))
}

/// Row-wise prox: row `i` of the result is `prox_{eta, r}(x_i)`.
pub fn aggregated_prox(x: &AgentField, eta: f64, r: &Regularizer) -> AgentField {
    let mut out = x.clone();
    for row in out.values_mut().rows_mut() {
        r.prox_in_place(row, eta);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Problem {
    loss: LossKind,
    agents: Vec<AgentData>,
    sigma: f64,
    regularizer: Regularizer,
    lipschitz: f64,
    mu: f64,
    n: usize,
    d: usize,
}

fn check_shapes(agents: &[AgentData], sigma: f64) -> Result<(usize, usize)> {
    let first = agents
        .first()
        .ok_or_else(|| Error::InvalidInput("problem needs at least one agent".into()))?;
    let (n, d) = first.features.dim();
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(
            "agents need at least one sample and one feature".into(),
        ));
    }
    for (i, a) in agents.iter().enumerate() {
        if a.features.dim() != (n, d) || a.labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "agent {i} holds {:?} samples, expected {n}x{d}",
                a.features.dim()
            )));
        }
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    Ok((n, d))
}

fn max_row_norm_sq(agents: &[AgentData]) -> f64 {
    agents
        .iter()
        .flat_map(|a| a.features.rows().into_iter().map(|r| r.dot(&r)))
        .fold(0.0, f64::max)
}

/// `f_{i,j}(x) = log(1 + exp(-b <a, x>)) + (sigma/2) ||x||^2`, labels in `{-1, +1}`.
/// Smoothness `max ||a||^2 / 4 + sigma`, strong convexity `sigma`.
pub fn logistic_problem(agents: Vec<AgentData>, sigma: f64) -> Result<Problem> {
    let (n, d) = check_shapes(&agents, sigma)?;
    for (i, a) in agents.iter().enumerate() {
        if let Some((j, b)) = a
            .labels
            .iter()
            .enumerate()
            .find(|(_, b)| **b != 1.0 && **b != -1.0)
        {
            return Err(Error::InvalidInput(format!(
                "agent {i} sample {j} has label {b}, expected -1 or +1"
            )));
        }
    }
    let lipschitz = max_row_norm_sq(&agents) / 4.0 + sigma;
    Ok(Problem {
        loss: LossKind::Logistic,
        agents,
        sigma,
        regularizer: Regularizer::None,
        lipschitz,
        mu: sigma,
        n,
        d,
    })
}

/// `f_{i,j}(x) = (<a, x> - b)^2 / 2 + (sigma/2) ||x||^2`.
/// Smoothness `max ||a||^2 + sigma`; strong convexity is the smallest
/// eigenvalue of the averaged Hessian.
pub fn least_squares_problem(agents: Vec<AgentData>, sigma: f64) -> Result<Problem> {
    let (n, d) = check_shapes(&agents, sigma)?;
    let lipschitz = max_row_norm_sq(&agents) + sigma;
    let mut gram = Array2::<f64>::zeros((d, d));
    for a in &agents {
        gram += &a.features.t().dot(&a.features);
    }
    gram /= (agents.len() * n) as f64;
    let lambda_min = *symmetric_eigenvalues(&gram).last().unwrap();
    Ok(Problem {
        loss: LossKind::LeastSquares,
        agents,
        sigma,
        regularizer: Regularizer::None,
        lipschitz,
        mu: lambda_min.max(0.0) + sigma,
        n,
        d,
    })
}

impl Problem {
    pub fn with_regularizer(mut self, r: Regularizer) -> Self {
        self.regularizer = r;
        self
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn m(&self) -> usize {
        self.agents.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub fn agents(&self) -> &[AgentData] {
        &self.agents
    }

    /// `kappa = L / mu`.
    pub fn condition_number(&self) -> Result<f64> {
        condition_number(self.lipschitz, self.mu)
    }

    /// All samples pooled into a single agent, in agent-major order.
    pub fn pooled(&self) -> Problem {
        let total = self.m() * self.n;
        let mut features = Array2::zeros((total, self.d));
        let mut labels = Array1::zeros(total);
        for (i, a) in self.agents.iter().enumerate() {
            let rows = i * self.n..(i + 1) * self.n;
            features
                .slice_mut(ndarray::s![rows.clone(), ..])
                .assign(&a.features);
            labels.slice_mut(ndarray::s![rows]).assign(&a.labels);
        }
        Problem {
            agents: vec![AgentData { features, labels }],
            n: total,
            ..self.clone()
        }
    }

    #[inline]
    fn margin(
        &self,
        agent: usize,
        j: usize,
        x: ArrayView1<f64>,
    ) -> (ArrayView1<'_, f64>, f64, f64) {
        let data = &self.agents[agent];
        let a = data.features.row(j);
        let b = data.labels[j];
        (a, b, a.dot(&x))
    }

    pub fn component_value(&self, agent: usize, j: usize, x: ArrayView1<f64>) -> f64 {
        let (_, b, ax) = self.margin(agent, j, x);
        let data_term = match self.loss {
            LossKind::Logistic => softplus(-b * ax),
            LossKind::LeastSquares => 0.5 * (ax - b) * (ax - b),
        };
        data_term + 0.5 * self.sigma * x.dot(&x)
    }

    /// `out += scale * grad f_{i,j}(x)`.
    pub fn add_component_grad(
        &self,
        agent: usize,
        j: usize,
        x: ArrayView1<f64>,
        scale: f64,
        mut out: ArrayViewMut1<f64>,
    ) {
        let (a, b, ax) = self.margin(agent, j, x);
        let coef = match self.loss {
            LossKind::Logistic => -b * sigmoid(-b * ax),
            LossKind::LeastSquares => ax - b,
        };
        let (ca, cx) = (scale * coef, scale * self.sigma);
        Zip::from(&mut out).and(&a).and(&x).for_each(|o, &ai, &xi| {
            *o += ca * ai + cx * xi;
        });
    }

    pub fn component_grad(&self, agent: usize, j: usize, x: ArrayView1<f64>) -> Array1<f64> {
        let mut g = Array1::zeros(self.d);
        self.add_component_grad(agent, j, x, 1.0, g.view_mut());
        g
    }

    /// `f_i(x)`.
    pub fn local_value(&self, agent: usize, x: ArrayView1<f64>) -> f64 {
        let data = &self.agents[agent];
        let margins = data.features.dot(&x);
        let data_term: f64 = match self.loss {
            LossKind::Logistic => Zip::from(&margins)
                .and(&data.labels)
                .fold(0.0, |acc, &ax, &b| acc + softplus(-b * ax)),
            LossKind::LeastSquares => Zip::from(&margins)
                .and(&data.labels)
                .fold(0.0, |acc, &ax, &b| acc + 0.5 * (ax - b) * (ax - b)),
        };
        data_term / self.n as f64 + 0.5 * self.sigma * x.dot(&x)
    }

    /// `grad f_i(x)`.
    pub fn local_grad(&self, agent: usize, x: ArrayView1<f64>) -> Array1<f64> {
        let data = &self.agents[agent];
        let coefs = self.loss_derivatives(agent, x);
        let mut g = x.to_owned() * self.sigma;
        let w = 1.0 / self.n as f64;
        for (a, c) in data.features.rows().into_iter().zip(coefs.iter()) {
            g.scaled_add(w * c, &a);
        }
        g
    }

    /// `l'(<a_j, x>, b_j)` for every sample of an agent.
    fn loss_derivatives(&self, agent: usize, x: ArrayView1<f64>) -> Array1<f64> {
        let data = &self.agents[agent];
        let mut margins = data.features.dot(&x);
        Zip::from(&mut margins)
            .and(&data.labels)
            .for_each(|ax, &b| {
                *ax = match self.loss {
                    LossKind::Logistic => -b * sigmoid(-b * *ax),
                    LossKind::LeastSquares => *ax - b,
                }
            });
        margins
    }

    /// Table of `grad f_{i,j}(x)` for every `j`, shape `n x d`.
    pub fn component_grads(&self, agent: usize, x: ArrayView1<f64>) -> Array2<f64> {
        let coefs = self.loss_derivatives(agent, x);
        let mut table = &self.agents[agent].features * &coefs.insert_axis(ndarray::Axis(1));
        for mut row in table.rows_mut() {
            row.scaled_add(self.sigma, &x);
        }
        table
    }

    /// `f(x)`.
    pub fn value(&self, x: ArrayView1<f64>) -> f64 {
        (0..self.m()).map(|i| self.local_value(i, x)).sum::<f64>() / self.m() as f64
    }

    /// `grad f(x)`.
    pub fn grad(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut g = Array1::zeros(self.d);
        for i in 0..self.m() {
            g += &self.local_grad(i, x);
        }
        g / self.m() as f64
    }

    /// `h(x) = f(x) + r(x)`.
    pub fn composite_value(&self, x: ArrayView1<f64>) -> f64 {
        self.value(x) + self.regularizer.value(x)
    }

    /// `||x - prox_{eta, r}(x - eta grad f(x))||`.
    pub fn fixed_point_residual(&self, x: ArrayView1<f64>, eta: f64) -> f64 {
        let step = &x - &(self.grad(x) * eta);
        let next = self.regularizer.prox(step.view(), eta);
        (&x - &next).dot(&(&x - &next)).sqrt()
    }
}

pub fn condition_number(lipschitz: f64, mu: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::NotStronglyConvex { mu });
    }
    Ok(lipschitz / mu)
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSolution {
    pub x_star: Array1<f64>,
    pub h_star: f64,
    pub method: String,
    pub iterations: usize,
    pub residual: f64,
}

/// Centralized proximal gradient with step `1/L` on `h = f + r`, stopped once
/// the fixed-point residual is at most `tol`.
pub fn solve_reference(problem: &Problem, tol: f64) -> Result<ReferenceSolution> {
    solve_reference_capped(problem, tol, REFERENCE_MAX_ITERS)
}

pub fn solve_reference_capped(
    problem: &Problem,
    tol: f64,
    max_iters: usize,
) -> Result<ReferenceSolution> {
    problem.condition_number()?;
    let eta = 1.0 / problem.lipschitz();
    let r = problem.regularizer();
    let mut x = Array1::<f64>::zeros(problem.d());
    let mut residual = f64::INFINITY;
    for it in 0..=max_iters {
        let step = &x - &(problem.grad(x.view()) * eta);
        let next = r.prox(step.view(), eta);
        let diff = &x - &next;
        residual = diff.dot(&diff).sqrt();
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok(ReferenceSolution {
                h_star: problem.composite_value(x.view()),
                x_star: x,
                method: "proximal_gradient".into(),
                iterations: it,
                residual,
            });
        }
        x = next;
    }
    Err(Error::ConvergenceFailure {
        iterations: max_iters,
        residual,
    })
}
