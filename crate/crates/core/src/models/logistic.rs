//! Logistic regression sampled by random-walk Metropolis–Hastings.
//!
//! The proposal starts from the inverse Fisher information at the origin.
//! During burn-in its scale is tuned towards a 25% acceptance rate and, at
//! the midpoint, its shape is replaced by the covariance of the draws seen so
//! far. After burn-in the proposal is frozen.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dist::robust_cholesky;
use super::SubsetTask;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const TARGET_ACCEPTANCE: f64 = 0.25;
const ADAPT_BATCH: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticPrior {
    /// Standard deviation of the independent zero-mean normal prior on each
    /// coefficient.
    pub prior_scale: f64,
}

impl Default for LogisticPrior {
    fn default() -> Self {
        Self { prior_scale: 10.0 }
    }
}

impl LogisticPrior {
    pub fn validate(&self) -> Result<()> {
        if self.prior_scale > 0.0 && self.prior_scale.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("prior scale must be positive, got {}", self.prior_scale)))
        }
    }
}

pub fn parameter_names(p: usize) -> Vec<String> {
    (1..=p).map(|r| format!("theta{r}")).collect()
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood `Σ y η − log(1 + e^η)` with `η = x·θ`.
pub fn log_likelihood(theta: ArrayView1<'_, f64>, design: ArrayView2<'_, f64>, response: ArrayView1<'_, f64>) -> f64 {
    design
        .rows()
        .into_iter()
        .zip(response)
        .map(|(x, &y)| {
            let eta = x.dot(&theta);
            y * eta - softplus(eta)
        })
        .sum()
}

pub fn log_prior(prior: &LogisticPrior, theta: ArrayView1<'_, f64>) -> f64 {
    let s2 = prior.prior_scale * prior.prior_scale;
    -0.5 * theta.iter().map(|t| t * t).sum::<f64>() / s2
}

pub(crate) fn log_terms(prior: &LogisticPrior, theta: ArrayView1<'_, f64>, shard: ArrayView2<'_, f64>) -> (f64, f64) {
    let (design, response) = split(shard);
    (log_likelihood(theta, design, response), log_prior(prior, theta))
}

fn split(shard: ArrayView2<'_, f64>) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
    let p = shard.ncols() - 1;
    let (design, response) = shard.split_at(ndarray::Axis(1), p);
    (design, response.index_axis_move(ndarray::Axis(1), 0))
}

fn check_shard(shard: ArrayView2<'_, f64>) -> Result<()> {
    if shard.ncols() < 2 {
        return Err(Error::InvalidInput("logistic data needs at least one design column and a response".into()));
    }
    let (design, response) = split(shard);
    if let Some(y) = response.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidInput(format!("logistic response must be 0 or 1, found {y}")));
    }
    for (r, col) in design.columns().into_iter().enumerate() {
        if col.iter().all(|&x| x == col[0]) {
            log::warn!("design column {} has zero variance", r + 1);
        }
    }
    Ok(())
}

/// Random-walk Metropolis targeting the tempered posterior. Returns the
/// retained draws and the post-burn-in acceptance rate.
pub(crate) fn sample(prior: &LogisticPrior, task: &SubsetTask) -> Result<(Array2<f64>, f64)> {
    let shard = task.shard.view();
    check_shard(shard)?;
    let (design, response) = split(shard);
    let p = design.ncols();
    let gamma = task.gamma;
    let chain = task.chain;
    let mut rng = rng_from_seed(task.seed);
    let target = |th: ArrayView1<'_, f64>| gamma * log_likelihood(th, design, response) + log_prior(prior, th);

    // inverse Fisher information at θ = 0: (γ XᵀX / 4 + I/s²)⁻¹
    let mut info = DMatrix::<f64>::zeros(p, p);
    for x in design.rows() {
        for a in 0..p {
            for b in 0..p {
                info[(a, b)] += gamma * x[a] * x[b] / 4.0;
            }
        }
    }
    for a in 0..p {
        info[(a, a)] += 1.0 / (prior.prior_scale * prior.prior_scale);
    }
    let cov0 = info.try_inverse().ok_or_else(|| Error::Numerical("singular Fisher information".into()))?;
    let mut shape = robust_cholesky(&cov0)?;
    let base_scale = 2.38 / (p as f64).sqrt();
    let mut log_scale = base_scale.ln();

    let mut theta = ndarray::Array1::<f64>::zeros(p);
    let mut current = target(theta.view());
    let mut proposal = theta.clone();
    let mut out = Array2::zeros((chain.kept(), p));
    let mut kept = 0;
    let mut batch_accepts = 0usize;
    let mut batch_no = 0usize;
    let mut accepted_after = 0usize;
    let mut history: Vec<f64> = Vec::new();
    let shape_update_at = chain.burn_in / 2;
    let history_from = chain.burn_in / 4;

    for t in 0..chain.iterations {
        let z = DVector::from_iterator(p, (0..p).map(|_| StandardNormal.sample(&mut rng)));
        let step = (&shape * z) * log_scale.exp();
        for r in 0..p {
            proposal[r] = theta[r] + step[r];
        }
        let cand = target(proposal.view());
        let u: f64 = rng.random();
        let accept = cand.is_finite() && u.ln() < cand - current;
        if accept {
            theta.assign(&proposal);
            current = cand;
        }

        if t < chain.burn_in {
            batch_accepts += usize::from(accept);
            if (t + 1) % ADAPT_BATCH == 0 {
                batch_no += 1;
                let rate = batch_accepts as f64 / ADAPT_BATCH as f64;
                log_scale += (rate - TARGET_ACCEPTANCE) * 2.0 / (batch_no as f64).sqrt();
                batch_accepts = 0;
            }
            if t >= history_from && t < shape_update_at {
                history.extend(theta.iter());
            }
            if t + 1 == shape_update_at && history.len() >= 2 * p * (p + 1) {
                if let Some(l) = empirical_shape(&history, p) {
                    shape = l;
                    log_scale = base_scale.ln();
                }
            }
        } else {
            accepted_after += usize::from(accept);
        }
        if chain.keeps(t) {
            out.row_mut(kept).assign(&theta);
            kept += 1;
        }
    }
    let acceptance = accepted_after as f64 / (chain.iterations - chain.burn_in) as f64;
    Ok((out, acceptance))
}

/// Cholesky factor of the covariance of the rows stored in `history`.
fn empirical_shape(history: &[f64], p: usize) -> Option<DMatrix<f64>> {
    let n = history.len() / p;
    let mut mean = vec![0.0; p];
    for row in history.chunks(p) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / n as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for row in history.chunks(p) {
        for a in 0..p {
            for b in 0..p {
                cov[(a, b)] += (row[a] - mean[a]) * (row[b] - mean[b]) / (n - 1) as f64;
            }
        }
    }
    if cov.diagonal().iter().any(|&d| !(d > 0.0)) {
        return None;
    }
    cov.cholesky().map(|c| c.l())
}

/// Synthetic data: `±1` design entries and Bernoulli responses.
pub fn simulate<R: Rng + ?Sized>(rng: &mut R, n: usize, theta: &[f64]) -> Array2<f64> {
    let p = theta.len();
    let mut data = Array2::zeros((n, p + 1));
    for mut row in data.rows_mut() {
        let mut eta = 0.0;
        for r in 0..p {
            let x = if rng.random::<bool>() { 1.0 } else { -1.0 };
            row[r] = x;
            eta += x * theta[r];
        }
        let prob = 1.0 / (1.0 + (-eta).exp());
        row[p] = if rng.random::<f64>() < prob { 1.0 } else { 0.0 };
    }
    data
}
