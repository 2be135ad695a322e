//! Truncated Dirichlet-process mixture of normals for scalar data.
//!
//! `x | z = h ~ N(μ_h, σ²_h)`, `μ_h | σ²_h ~ N(0, σ²_h)`,
//! `σ²_h ~ Inverse-Gamma(a_σ, b_σ)`, stick proportions `V_h ~ Beta(1, α)` and
//! `α ~ Gamma(a_α, b_α)`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dist::{categorical_from_log, inverse_gamma, normal};
use super::gmm::log_sum_exp;
use super::stick::{draw_concentration, draw_sticks, log_stick_weights, normalized_weights, sticks_from_weights};
use super::SubsetTask;
use crate::cluster::kmeans;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpmPrior {
    /// Number of sticks `l*`.
    pub truncation: usize,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
}

impl Default for DpmPrior {
    fn default() -> Self {
        Self { truncation: 20, a_sigma: 3.0, b_sigma: 2.0, a_alpha: 1.0, b_alpha: 1.0 }
    }
}

impl DpmPrior {
    pub fn validate(&self) -> Result<()> {
        if self.truncation < 1 {
            return Err(Error::InvalidInput("truncation must be at least 1".into()));
        }
        if !(self.a_sigma > 2.0) {
            return Err(Error::InvalidInput(format!("a_sigma must exceed 2, got {}", self.a_sigma)));
        }
        for (name, v) in [("b_sigma", self.b_sigma), ("a_alpha", self.a_alpha), ("b_alpha", self.b_alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn parameter_names(truncation: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=truncation).map(|h| format!("nu{h}")).collect();
    names.extend((1..=truncation).map(|h| format!("mu{h}")));
    names.extend((1..=truncation).map(|h| format!("sigma2_{h}")));
    names.push("alpha".into());
    names
}

/// Normal conditional of a cluster location: mean and variance.
pub fn location_conditional(count: usize, sum: f64, variance: f64, gamma: f64) -> (f64, f64) {
    let denom = gamma * count as f64 + 1.0;
    (gamma * sum / denom, variance / denom)
}

/// Inverse-Gamma conditional of a cluster variance: shape and scale.
/// `sq_dev` is `Σ_{i in h} (x_i − μ)²`.
pub fn variance_conditional(prior: &DpmPrior, count: usize, sq_dev: f64, location: f64, gamma: f64) -> (f64, f64) {
    let shape = (gamma * count as f64 + 1.0) / 2.0 + prior.a_sigma;
    let scale = gamma / 2.0 * sq_dev + location * location / 2.0 + prior.b_sigma;
    (shape, scale)
}

pub(crate) fn sample(prior: &DpmPrior, task: &SubsetTask) -> Result<Array2<f64>> {
    let data = task.shard.view();
    if data.ncols() != 1 {
        return Err(Error::InvalidInput(format!("density model expects one data column, got {}", data.ncols())));
    }
    let x: Vec<f64> = data.column(0).to_vec();
    let l = prior.truncation;
    let gamma = task.gamma;
    let mut rng = rng_from_seed(task.seed);

    let init = l.min(5).min(x.len());
    let mut z = kmeans(data, init, 25, &mut rng)?.labels;
    let spread = {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|xi| (xi - mean) * (xi - mean)).sum::<f64>() / x.len() as f64;
        if v > 0.0 { v } else { 1.0 }
    };
    let mut loc = vec![0.0; l];
    let mut var = vec![spread; l];
    let mut sticks = vec![0.5; l];
    let mut alpha = 1.0;

    let mut out = Array2::zeros((task.chain.kept(), 3 * l + 1));
    let mut kept = 0;
    let mut counts = vec![0usize; l];
    let mut sums = vec![0.0; l];
    let mut squares = vec![0.0; l];
    let mut log_nu = vec![0.0; l];
    let mut consts = vec![0.0; l];
    let mut inv2v = vec![0.0; l];
    let mut logw = vec![0.0; l];
    let mut cumul = vec![0.0; l];

    for t in 0..task.chain.iterations {
        counts.fill(0);
        sums.fill(0.0);
        squares.fill(0.0);
        for (&xi, &h) in x.iter().zip(&z) {
            counts[h] += 1;
            sums[h] += xi;
            squares[h] += xi * xi;
        }
        for h in 0..l {
            let (m, v) = location_conditional(counts[h], sums[h], var[h], gamma);
            loc[h] = normal(&mut rng, m, v.sqrt());
            let sq_dev = (squares[h] - 2.0 * loc[h] * sums[h] + counts[h] as f64 * loc[h] * loc[h]).max(0.0);
            let (a, b) = variance_conditional(prior, counts[h], sq_dev, loc[h], gamma);
            var[h] = inverse_gamma(&mut rng, a, b).max(f64::MIN_POSITIVE);
        }
        draw_sticks(&mut rng, &counts, alpha, gamma, &mut sticks);
        alpha = draw_concentration(&mut rng, prior.a_alpha, prior.b_alpha, &sticks);

        log_stick_weights(&sticks, &mut log_nu);
        for h in 0..l {
            consts[h] = log_nu[h] - 0.5 * var[h].ln();
            inv2v[h] = 0.5 / var[h];
        }
        for (&xi, zi) in x.iter().zip(z.iter_mut()) {
            for h in 0..l {
                let d = xi - loc[h];
                logw[h] = consts[h] - d * d * inv2v[h];
            }
            *zi = categorical_from_log(&mut rng, &logw, &mut cumul);
        }

        if task.chain.keeps(t) {
            let mut row = out.row_mut(kept);
            for (h, w) in normalized_weights(&sticks).into_iter().enumerate() {
                row[h] = w;
                row[l + h] = loc[h];
                row[2 * l + h] = var[h];
            }
            row[3 * l] = alpha;
            kept += 1;
        }
    }
    Ok(out)
}

/// Mixture density `Σ_h ν_h N(x | μ_h, σ²_h)` of one draw.
pub fn density_at(theta: ArrayView1<'_, f64>, truncation: usize, x: f64) -> f64 {
    let l = truncation;
    (0..l)
        .map(|h| {
            let (w, m, v) = (theta[h], theta[l + h], theta[2 * l + h]);
            w * (-(x - m) * (x - m) / (2.0 * v) - 0.5 * (LN_2PI + v.ln())).exp()
        })
        .sum()
}

pub(crate) fn log_terms(prior: &DpmPrior, theta: ArrayView1<'_, f64>, shard: ArrayView2<'_, f64>) -> (f64, f64) {
    let l = prior.truncation;
    let w = theta.slice(ndarray::s![..l]);
    let var = theta.slice(ndarray::s![2 * l..3 * l]);
    let alpha = theta[3 * l];
    let valid = w.iter().all(|&v| v >= 0.0) && (w.sum() - 1.0).abs() < 1e-8 && var.iter().all(|&v| v > 0.0) && alpha > 0.0;
    if !valid || shard.ncols() != 1 {
        return (f64::NEG_INFINITY, f64::NEG_INFINITY);
    }
    let mut logw = vec![0.0; l];
    let loglik = shard
        .column(0)
        .iter()
        .map(|&x| {
            for h in 0..l {
                let (m, v) = (theta[l + h], var[h]);
                logw[h] = w[h].ln() - (x - m) * (x - m) / (2.0 * v) - 0.5 * (LN_2PI + v.ln());
            }
            log_sum_exp(&logw)
        })
        .sum();

    let mut log_prior = (prior.a_alpha - 1.0) * alpha.ln() - prior.b_alpha * alpha;
    for h in 0..l {
        let (m, v) = (theta[l + h], var[h]);
        log_prior += -0.5 * v.ln() - m * m / (2.0 * v);
        log_prior += -(prior.a_sigma + 1.0) * v.ln() - prior.b_sigma / v;
    }
    let sticks = sticks_from_weights(&w.to_vec());
    for &v in &sticks[..l - 1] {
        log_prior += alpha.ln() + (alpha - 1.0) * (-v).ln_1p();
    }
    (loglik, log_prior)
}

/// `n` draws from `Σ_h w_h N(m_h, s_h²)`.
pub fn simulate<R: Rng + ?Sized>(rng: &mut R, n: usize, weights: &[f64], means: &[f64], sds: &[f64]) -> Array2<f64> {
    let logw: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut scratch = vec![0.0; weights.len()];
    Array2::from_shape_simple_fn((n, 1), || {
        let h = categorical_from_log(rng, &logw, &mut scratch);
        normal(rng, means[h], sds[h])
    })
}
