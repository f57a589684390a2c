//! Agent-stacked vectors, plain gossip, and Chebyshev-accelerated multi-consensus.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::topology::GossipMatrix;

/// Upper clamp for [`choose_k`].
pub const MAX_ROUNDS: usize = 1_000_000;

/// One `d`-vector per agent, stacked as the rows of an `m x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentField(Array2<f64>);

impl AgentField {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let field = Self(values);
        field.ensure_finite("agent field", 0)?;
        Ok(field)
    }

    pub fn zeros(m: usize, d: usize) -> Self {
        Self(Array2::zeros((m, d)))
    }

    /// Every agent holds a copy of `row`.
    pub fn consensual(m: usize, row: ArrayView1<f64>) -> Self {
        let mut values = Array2::zeros((m, row.len()));
        for mut r in values.rows_mut() {
            r.assign(&row);
        }
        Self(values)
    }

    pub(crate) fn from_raw(values: Array2<f64>) -> Self {
        Self(values)
    }

    pub fn m(&self) -> usize {
        self.0.nrows()
    }

    pub fn d(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn row(&self, agent: usize) -> ArrayView1<'_, f64> {
        self.0.row(agent)
    }

    /// Agent average `(1/m) 1^T x`.
    pub fn mean(&self) -> Array1<f64> {
        self.0
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(self.d()))
    }

    /// Column sums `1^T x`.
    pub fn column_sums(&self) -> Array1<f64> {
        self.0.sum_axis(Axis(0))
    }

    /// Frobenius norm of `x - 1 xbar`.
    pub fn deviation_norm(&self) -> f64 {
        self.deviation_sq().sqrt()
    }

    /// `||x - 1 xbar||_F^2`.
    pub fn deviation_sq(&self) -> f64 {
        let mean = self.mean();
        self.0
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .zip(mean.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum()
    }

    pub(crate) fn ensure_finite(&self, context: &str, round: usize) -> Result<()> {
        if self.0.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericalFailure {
                context: context.to_string(),
                round,
            })
        }
    }

    fn check_against(&self, w: &GossipMatrix) -> Result<()> {
        if self.m() != w.m() {
            return Err(Error::DimensionMismatch(format!(
                "field has {} agents but the gossip matrix is {}x{}",
                self.m(),
                w.m(),
                w.m()
            )));
        }
        Ok(())
    }
}

/// Counts gossip rounds; one round is one multiplication by `W`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommBudget {
    rounds: u64,
}

impl CommBudget {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn charge(&mut self, rounds: u64) {
        self.rounds += rounds;
    }
}

/// `x <- W x`, one communication round.
pub fn gossip_once(
    x: &AgentField,
    w: &GossipMatrix,
    budget: &mut CommBudget,
) -> Result<AgentField> {
    x.check_against(w)?;
    let out = AgentField(w.weights().dot(x.values()));
    budget.charge(1);
    out.ensure_finite("gossip", 1)?;
    Ok(out)
}

/// Momentum coefficient `(1 - sqrt(1 - l^2)) / (1 + sqrt(1 - l^2))`.
pub fn fastmix_step_size(lambda2: f64) -> f64 {
    let root = (1.0 - lambda2 * lambda2).max(0.0).sqrt();
    (1.0 - root) / (1.0 + root)
}

/// Chebyshev-accelerated gossip with exactly `k` multiplications by `W`:
/// `x^{k+1} = (1 + eta_w) W x^k - eta_w x^{k-1}` with `x^{-1} = x^0`.
pub fn fastmix(
    x: &AgentField,
    w: &GossipMatrix,
    k: usize,
    budget: &mut CommBudget,
) -> Result<AgentField> {
    if k == 0 {
        return Err(Error::InvalidInput(
            "fastmix needs at least one round".into(),
        ));
    }
    x.check_against(w)?;
    let eta = fastmix_step_size(w.mixing_rate());
    let mut prev = x.0.clone();
    let mut cur = x.0.clone();
    for round in 1..=k {
        let mut next = w.weights().dot(&cur);
        next.zip_mut_with(&prev, |n, &p| *n = (1.0 + eta) * *n - eta * p);
        prev = std::mem::replace(&mut cur, next);
        budget.charge(1);
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure {
                context: "fastmix".into(),
                round,
            });
        }
    }
    Ok(AgentField(cur))
}

/// `ceil(ln(41 max(24 kappa, 4 n)) / sqrt(1 - lambda2))`, clamped to `[1, MAX_ROUNDS]`.
pub fn choose_k(lambda2: f64, kappa: f64, n: usize) -> Result<usize> {
    if !(0.0..1.0).contains(&lambda2) {
        return Err(Error::InvalidTopology(format!(
            "mixing rate {lambda2} must lie in [0, 1)"
        )));
    }
    if !(kappa >= 1.0) || n == 0 {
        return Err(Error::InvalidInput(format!(
            "choose_k needs kappa >= 1 and n >= 1 (got kappa={kappa}, n={n})"
        )));
    }
    let target = 41.0 * (24.0 * kappa).max(4.0 * n as f64);
    let k = (target.ln() / (1.0 - lambda2).sqrt()).ceil();
    Ok((k as usize).clamp(1, MAX_ROUNDS))
}

/// A user-supplied `K` wins over [`choose_k`].
pub fn resolve_k(user: Option<usize>, lambda2: f64, kappa: f64, n: usize) -> Result<usize> {
    match user {
        Some(0) => Err(Error::InvalidInput("K must be positive".into())),
        Some(k) => Ok(k),
        None => choose_k(lambda2, kappa, n),
    }
}
