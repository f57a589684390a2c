//! Convergence diagnostics: consensus errors, the gradient learning quantity,
//! the Lyapunov function, and the cost model.

use ndarray::{Array1, Array2, ArrayView1};
use serde::Serialize;

use crate::algorithms::{Algorithm, RunConfig};
use crate::consensus::AgentField;
use crate::error::Result;
use crate::estimators::{LsvrgState, SagaState};
use crate::problems::{solve_reference, Problem, ReferenceSolution};

/// `z = [(1/m) ||x - 1 xbar||^2, (eta^2/m) ||s - 1 sbar||^2]`.
pub fn consensus_errors(x: &AgentField, s: &AgentField, eta: f64) -> (f64, f64) {
    (consensus_error(x), eta * eta * consensus_error(s))
}

/// `(1/m) ||x - 1 xbar||^2`.
pub fn consensus_error(x: &AgentField) -> f64 {
    x.deviation_sq() / x.m() as f64
}

/// `grad f_{i,j}(x*)` for every agent and sample, computed once.
#[derive(Debug, Clone)]
pub struct StarGradients {
    tables: Vec<Array2<f64>>,
}

impl StarGradients {
    pub fn new(problem: &Problem, x_star: ArrayView1<f64>) -> Self {
        Self {
            tables: (0..problem.m())
                .map(|i| problem.component_grads(i, x_star))
                .collect(),
        }
    }

    pub fn table(&self, agent: usize) -> &Array2<f64> {
        &self.tables[agent]
    }

    /// Stack every agent's table into one, agent-major (matches `Problem::pooled`).
    pub fn pooled(&self) -> Self {
        let views: Vec<_> = self.tables.iter().map(|t| t.view()).collect();
        Self {
            tables: vec![ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")],
        }
    }
}

/// Reference solution plus cached star gradients.
#[derive(Debug, Clone)]
pub struct Reference {
    pub solution: ReferenceSolution,
    pub star: StarGradients,
}

impl Reference {
    pub fn new(problem: &Problem, solution: ReferenceSolution) -> Self {
        let star = StarGradients::new(problem, solution.x_star.view());
        Self { solution, star }
    }

    pub fn solve(problem: &Problem, tol: f64) -> Result<Self> {
        Ok(Self::new(problem, solve_reference(problem, tol)?))
    }

    pub fn x_star(&self) -> &Array1<f64> {
        &self.solution.x_star
    }

    pub fn h_star(&self) -> f64 {
        self.solution.h_star
    }
}

fn mean_sq_table_gap<'a>(pairs: impl Iterator<Item = (&'a Array2<f64>, &'a Array2<f64>)>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in pairs {
        total += a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
        count += a.nrows();
    }
    total / count as f64
}

/// `(1/mn) sum_{i,j} ||table_{i,j} - grad f_{i,j}(x*)||^2` from the stored SAGA gradients.
pub fn delta_saga(state: &SagaState, star: &StarGradients) -> f64 {
    let m = star.tables.len();
    mean_sq_table_gap((0..m).map(|i| (state.table(i), star.table(i))))
}

/// `(1/mn) sum_{i,j} ||grad f_{i,j}(w_i) - grad f_{i,j}(x*)||^2`. Evaluates every
/// component gradient at the reference points; not counted as algorithm cost.
pub fn delta_lsvrg(state: &LsvrgState, problem: &Problem, star: &StarGradients) -> f64 {
    let tables: Vec<Array2<f64>> = (0..problem.m())
        .map(|i| problem.component_grads(i, state.reference(i)))
        .collect();
    mean_sq_table_gap(tables.iter().zip(star.tables.iter()))
}

/// `V = ||xbar - x*||^2 + 4 n eta^2 Delta`.
pub fn lyapunov(
    x_bar: ArrayView1<f64>,
    x_star: ArrayView1<f64>,
    delta: f64,
    eta: f64,
    n: usize,
) -> f64 {
    let diff = &x_bar - &x_star;
    diff.dot(&diff) + 4.0 * n as f64 * eta * eta * delta
}

/// `max{(1/m)||x - 1 xbar||^2, ||xbar - x*||^2} < eps` (strict).
pub fn epsilon_reached(x: &AgentField, x_star: ArrayView1<f64>, eps: f64) -> bool {
    epsilon_measure(x, x_star) < eps
}

pub fn epsilon_measure(x: &AgentField, x_star: ArrayView1<f64>) -> f64 {
    let diff = &x.mean() - &x_star;
    consensus_error(x).max(diff.dot(&diff))
}

/// `max(1 - 1/(24 kappa), 1 - 1/(4n))`.
pub fn theoretical_rate(kappa: f64, n: usize) -> f64 {
    (1.0 - 1.0 / (24.0 * kappa)).max(1.0 - 1.0 / (4.0 * n as f64))
}

/// Gradient evaluations plus `tau` per communication round, both per agent.
pub fn weighted_cost(grad_evals: f64, comm_rounds: f64, tau: f64) -> f64 {
    grad_evals + tau * comm_rounds
}

/// One recorded iteration. Optional columns are empty when the quantity
/// does not apply (no tracker, no reference solution, ...).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub t: usize,
    pub consensus_x: f64,
    pub consensus_s: Option<f64>,
    pub tracking_err: Option<f64>,
    pub delta: Option<f64>,
    pub lyapunov: Option<f64>,
    /// `h(xbar) - h*`, or raw `h(xbar)` without a reference.
    pub subopt: f64,
    pub dist_sq: Option<f64>,
    /// Cumulative component gradient evaluations summed over agents.
    pub grad_evals: u64,
    /// Cumulative gossip rounds (per agent).
    pub comm_rounds: u64,
}

/// Column order of the per-run CSV.
pub const DIAGNOSTICS_COLUMNS: [&str; 10] = [
    "t",
    "consensus_x",
    "consensus_s",
    "tracking_err",
    "delta",
    "lyapunov",
    "subopt",
    "dist_sq",
    "grad_evals",
    "comm_rounds",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemSummary {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub lipschitz: f64,
    pub mu: f64,
    pub kappa: f64,
    pub lambda2: f64,
    pub k: usize,
    pub eta: f64,
    pub p: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub config: RunConfig,
    pub summary: ProblemSummary,
    pub rows: Vec<DiagnosticsRow>,
    pub final_x: AgentField,
}

impl RunRecord {
    pub fn last(&self) -> Option<&DiagnosticsRow> {
        self.rows.last()
    }

    /// Gradient evaluations per agent for a row.
    pub fn grad_evals_per_agent(&self, row: &DiagnosticsRow) -> f64 {
        row.grad_evals as f64 / self.summary.m as f64
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(DIAGNOSTICS_COLUMNS)?;
        }
        w.flush().map_err(|e| crate::Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Inputs for one diagnostics row, gathered by the driver.
pub(crate) struct Snapshot<'a> {
    pub t: usize,
    pub x: &'a AgentField,
    pub s: Option<&'a AgentField>,
    pub delta: Option<f64>,
    pub eta: f64,
    pub n: usize,
    pub grad_evals: u64,
    pub comm_rounds: u64,
}

pub(crate) fn diagnose(
    problem: &Problem,
    reference: Option<&Reference>,
    snap: Snapshot<'_>,
) -> DiagnosticsRow {
    let x_bar = snap.x.mean();
    let h = problem.composite_value(x_bar.view());
    let (consensus_s, tracking_err) = match snap.s {
        Some(s) => {
            let gap = &s.mean() - &problem.grad(x_bar.view());
            (
                Some(snap.eta * snap.eta * consensus_error(s)),
                Some(gap.dot(&gap).sqrt()),
            )
        }
        None => (None, None),
    };
    let (subopt, dist_sq, delta, lyap) = match reference {
        Some(r) => {
            let diff = &x_bar - r.x_star();
            let dist = diff.dot(&diff);
            let delta = snap.delta;
            let lyap =
                delta.map(|dl| lyapunov(x_bar.view(), r.x_star().view(), dl, snap.eta, snap.n));
            (h - r.h_star(), Some(dist), delta, lyap)
        }
        None => (h, None, None, None),
    };
    DiagnosticsRow {
        t: snap.t,
        consensus_x: consensus_error(snap.x),
        consensus_s,
        tracking_err,
        delta,
        lyapunov: lyap,
        subopt,
        dist_sq,
        grad_evals: snap.grad_evals,
        comm_rounds: snap.comm_rounds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{least_squares_problem, AgentData};
    use ndarray::array;

    #[test]
    fn consensus_examples() {
        let c = AgentField::consensual(3, array![1.0, 2.0].view());
        assert_eq!(consensus_errors(&c, &c, 0.5), (0.0, 0.0));
        let x = AgentField::new(array![[1.0], [-1.0]]).unwrap();
        let (zx, zs) = consensus_errors(&x, &x, 0.5);
        assert_eq!(zx, 1.0);
        assert_eq!(zs, 0.25);
    }

    #[test]
    fn lyapunov_examples() {
        let z = array![0.0, 1.0];
        assert_eq!(lyapunov(z.view(), z.view(), 0.0, 0.1, 5), 0.0);
        assert_eq!(lyapunov(z.view(), z.view(), 0.25, 1.0, 1), 1.0);
    }

    #[test]
    fn epsilon_examples() {
        let star = array![0.5, -0.5];
        let x = AgentField::consensual(4, star.view());
        assert!(epsilon_reached(&x, star.view(), 1e-300));
        let off = AgentField::consensual(4, array![0.5, 0.5].view());
        assert!(!epsilon_reached(&off, star.view(), 0.5));
        // value exactly eps is not below eps
        assert!(!epsilon_reached(&off, star.view(), 1.0));
        assert!(epsilon_reached(&off, star.view(), 1.0 + 1e-12));
    }

    #[test]
    fn rate_examples() {
        assert_eq!(theoretical_rate(1.0, 1), 23.0 / 24.0);
        assert_eq!(theoretical_rate(1.0, 1000), 1.0 - 1.0 / 4000.0);
        assert_eq!(theoretical_rate(1e6, 10), 1.0 - 1.0 / 2.4e7);
    }

    #[test]
    fn cost_examples() {
        assert_eq!(weighted_cost(37.0, 5.0, 0.0), 37.0);
        assert_eq!(weighted_cost(100.0, 4.0, 250.0), 1100.0);
    }

    #[test]
    fn delta_single_entry() {
        let p = least_squares_problem(
            vec![AgentData::new(array![[1.0, 2.0]], array![0.5]).unwrap()],
            0.0,
        )
        .unwrap();
        let x0 = AgentField::new(array![[0.3, -0.1]]).unwrap();
        let saga = SagaState::new(&p, &x0);
        let star_x = array![1.0, 1.0];
        let star = StarGradients::new(&p, star_x.view());
        let g = p.component_grad(0, 0, x0.row(0));
        let gs = p.component_grad(0, 0, star_x.view());
        let expected = (&g - &gs).dot(&(&g - &gs));
        assert!((delta_saga(&saga, &star) - expected).abs() < 1e-15);

        let at_star = SagaState::new(&p, &AgentField::new(array![[1.0, 1.0]]).unwrap());
        assert_eq!(delta_saga(&at_star, &star), 0.0);

        let grads =
            AgentField::new(p.local_grad(0, star_x.view()).insert_axis(ndarray::Axis(0))).unwrap();
        let lsvrg = LsvrgState::new(&AgentField::new(array![[1.0, 1.0]]).unwrap(), &grads, 0.5);
        assert_eq!(delta_lsvrg(&lsvrg, &p, &star), 0.0);
    }
}
