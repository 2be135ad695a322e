//! Finite Gaussian mixture sampled by a tempered Gibbs sampler.
//!
//! Prior: `π ~ Dirichlet(c, …, c)`, `μ_h | Σ_h ~ N(0, Σ_h / κ)` and
//! `Σ_h ~ Inverse-Wishart(ν, s·I)`. The covariance is drawn from its
//! conditional given the freshly drawn mean, so the scale matrix carries the
//! scatter about `μ_h` plus the `κ μ_h μ_hᵀ` term from the mean prior.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dist::{categorical_from_log, dirichlet_into, inverse_wishart, multivariate_normal, robust_cholesky};
use super::{DrawSet, SubsetTask};
use crate::cluster::kmeans;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmPrior {
    /// Number of mixture components `L`.
    pub components: usize,
    /// Symmetric Dirichlet concentration; `1/L` when absent.
    pub concentration: Option<f64>,
    /// `κ` in `μ_h | Σ_h ~ N(0, Σ_h/κ)`.
    pub mean_precision: f64,
    pub iw_df: f64,
    /// Multiple of the identity used as the inverse-Wishart scale.
    pub iw_scale: f64,
}

impl Default for GmmPrior {
    fn default() -> Self {
        Self { components: 2, concentration: None, mean_precision: 0.01, iw_df: 2.0, iw_scale: 4.0 }
    }
}

impl GmmPrior {
    pub fn validate(&self) -> Result<()> {
        if self.components < 1 {
            return Err(Error::InvalidInput("a mixture needs at least one component".into()));
        }
        let c = self.concentration();
        for (name, v) in [("concentration", c), ("mean precision", self.mean_precision), ("inverse-Wishart scale", self.iw_scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.iw_df > 0.0) {
            return Err(Error::InvalidInput(format!("inverse-Wishart df must be positive, got {}", self.iw_df)));
        }
        Ok(())
    }

    pub fn concentration(&self) -> f64 {
        self.concentration.unwrap_or(1.0 / self.components as f64)
    }
}

pub fn parameter_names(components: usize, p: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=components).map(|h| format!("pi{h}")).collect();
    for h in 1..=components {
        names.extend((1..=p).map(|a| format!("mu{h}_{a}")));
        for a in 1..=p {
            names.extend((a..=p).map(|b| format!("sigma{h}_{a}_{b}")));
        }
    }
    names
}

fn block_len(p: usize) -> usize {
    p + p * (p + 1) / 2
}

/// Dirichlet parameters of the mixture weights given cluster sizes.
pub fn weights_conditional(prior: &GmmPrior, counts: &[usize], gamma: f64) -> Vec<f64> {
    let c = prior.concentration();
    counts.iter().map(|&n| gamma * n as f64 + c).collect()
}

/// Normal conditional of one component mean given its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanConditional {
    /// Shrinkage applied to the cluster average.
    pub shrinkage: f64,
    pub mean: Vec<f64>,
    /// The covariance is `Σ_h / precision`.
    pub precision: f64,
}

pub fn mean_conditional(prior: &GmmPrior, count: usize, sum: &[f64], gamma: f64) -> MeanConditional {
    let tn = gamma * count as f64;
    let precision = prior.mean_precision + tn;
    let shrinkage = tn / precision;
    let mean = sum.iter().map(|s| gamma * s / precision).collect();
    MeanConditional { shrinkage, mean, precision }
}

/// Inverse-Wishart conditional of one covariance given its mean.
/// `scatter` is `Σ_{i in h} (y_i − μ)(y_i − μ)ᵀ`.
pub fn covariance_conditional(prior: &GmmPrior, count: usize, scatter: &DMatrix<f64>, mean: &DVector<f64>, gamma: f64) -> (f64, DMatrix<f64>) {
    let p = mean.len();
    let df = gamma * count as f64 + prior.iw_df + 1.0;
    let scale = DMatrix::identity(p, p) * prior.iw_scale + scatter * gamma + mean * mean.transpose() * prior.mean_precision;
    (df, scale)
}

/// Per-component sums needed by the conditionals.
struct Stats {
    counts: Vec<usize>,
    sums: Vec<Vec<f64>>,
    // raw second moments, row-major p×p per component
    squares: Vec<Vec<f64>>,
}

impl Stats {
    fn collect(data: ArrayView2<'_, f64>, z: &[usize], components: usize) -> Self {
        let p = data.ncols();
        let mut s = Stats { counts: vec![0; components], sums: vec![vec![0.0; p]; components], squares: vec![vec![0.0; p * p]; components] };
        for (y, &h) in data.rows().into_iter().zip(z) {
            s.counts[h] += 1;
            for a in 0..p {
                s.sums[h][a] += y[a];
                for b in a..p {
                    s.squares[h][a * p + b] += y[a] * y[b];
                }
            }
        }
        s
    }

    fn scatter_about(&self, h: usize, mu: &DVector<f64>) -> DMatrix<f64> {
        let p = mu.len();
        let n = self.counts[h] as f64;
        DMatrix::from_fn(p, p, |a, b| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            self.squares[h][lo * p + hi] - self.sums[h][a] * mu[b] - mu[a] * self.sums[h][b] + n * mu[a] * mu[b]
        })
    }
}

/// Cached quantities for evaluating `log π_h + log N(y | μ_h, Σ_h)`.
struct Component {
    mean: Vec<f64>,
    chol: DMatrix<f64>,
    offset: f64,
}

impl Component {
    fn new(weight: f64, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = robust_cholesky(cov)?;
        let p = mean.len();
        let log_det: f64 = chol.diagonal().iter().map(|d| d.ln()).sum();
        let offset = weight.ln() - log_det - 0.5 * p as f64 * LN_2PI;
        Ok(Self { mean: mean.iter().copied().collect(), chol, offset })
    }

    fn log_weighted_density(&self, y: ArrayView1<'_, f64>, scratch: &mut [f64]) -> f64 {
        let p = self.mean.len();
        let mut q = 0.0;
        for a in 0..p {
            let mut v = y[a] - self.mean[a];
            for b in 0..a {
                v -= self.chol[(a, b)] * scratch[b];
            }
            v /= self.chol[(a, a)];
            scratch[a] = v;
            q += v * v;
        }
        self.offset - 0.5 * q
    }
}

pub(crate) fn sample(prior: &GmmPrior, task: &SubsetTask) -> Result<Array2<f64>> {
    let data = task.shard.view();
    let (m, p) = data.dim();
    let l = prior.components;
    if m < l {
        return Err(Error::InvalidInput(format!("{m} rows cannot seed {l} components")));
    }
    let gamma = task.gamma;
    let mut rng = rng_from_seed(task.seed);

    let mut z = kmeans(data, l, 25, &mut rng)?.labels;
    let mut weights = vec![1.0 / l as f64; l];
    let mut means = vec![DVector::<f64>::zeros(p); l];
    let mut covs = initial_covariances(data, &z, l);

    let width = l + l * block_len(p);
    let mut out = Array2::zeros((task.chain.kept(), width));
    let mut kept = 0;
    let mut logw = vec![0.0; l];
    let mut cumul = vec![0.0; l];
    let mut scratch = vec![0.0; p];
    let mut alpha = vec![0.0; l];

    for t in 0..task.chain.iterations {
        let stats = Stats::collect(data, &z, l);
        alpha.copy_from_slice(&weights_conditional(prior, &stats.counts, gamma));
        dirichlet_into(&mut rng, &alpha, &mut weights);
        for h in 0..l {
            let mc = mean_conditional(prior, stats.counts[h], &stats.sums[h], gamma);
            let cov = &covs[h] / mc.precision;
            means[h] = multivariate_normal(&mut rng, &DVector::from_vec(mc.mean), &cov)?;
            let scatter = stats.scatter_about(h, &means[h]);
            let (df, scale) = covariance_conditional(prior, stats.counts[h], &scatter, &means[h], gamma);
            covs[h] = inverse_wishart(&mut rng, df, &scale)?;
        }
        let comps = (0..l)
            .map(|h| Component::new(weights[h].max(f64::MIN_POSITIVE), &means[h], &covs[h]))
            .collect::<Result<Vec<_>>>()?;
        for (y, zi) in data.rows().into_iter().zip(z.iter_mut()) {
            for (lw, c) in logw.iter_mut().zip(&comps) {
                *lw = c.log_weighted_density(y, &mut scratch);
            }
            *zi = categorical_from_log(&mut rng, &logw, &mut cumul);
        }

        if task.chain.keeps(t) {
            let mut row = out.row_mut(kept);
            let mut c = 0;
            for &w in &weights {
                row[c] = w;
                c += 1;
            }
            for h in 0..l {
                for a in 0..p {
                    row[c] = means[h][a];
                    c += 1;
                }
                for a in 0..p {
                    for b in a..p {
                        row[c] = covs[h][(a, b)];
                        c += 1;
                    }
                }
            }
            kept += 1;
        }
    }
    Ok(out)
}

fn initial_covariances(data: ArrayView2<'_, f64>, z: &[usize], l: usize) -> Vec<DMatrix<f64>> {
    let p = data.ncols();
    let stats = Stats::collect(data, z, l);
    (0..l)
        .map(|h| {
            let n = stats.counts[h];
            if n <= p + 1 {
                return DMatrix::identity(p, p);
            }
            let mean = DVector::from_iterator(p, stats.sums[h].iter().map(|s| s / n as f64));
            let mut c = stats.scatter_about(h, &mean) / n as f64;
            for a in 0..p {
                c[(a, a)] += 1e-6;
            }
            if c.clone().cholesky().is_some() {
                c
            } else {
                DMatrix::identity(p, p)
            }
        })
        .collect()
}

/// Decoded mixture parameters from one draw row.
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

pub fn decode(theta: ArrayView1<'_, f64>, components: usize, p: usize) -> Result<MixtureParams> {
    let expected = components * (1 + block_len(p));
    if theta.len() != expected {
        return Err(Error::DimensionMismatch { expected, found: theta.len() });
    }
    let weights = theta.iter().take(components).copied().collect();
    let mut means = Vec::with_capacity(components);
    let mut covs = Vec::with_capacity(components);
    let mut c = components;
    for _ in 0..components {
        means.push(DVector::from_iterator(p, theta.iter().skip(c).take(p).copied()));
        c += p;
        let mut s = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                s[(a, b)] = theta[c];
                s[(b, a)] = theta[c];
                c += 1;
            }
        }
        covs.push(s);
    }
    Ok(MixtureParams { weights, means, covs })
}

/// Number of data dimensions implied by a draw width, if any.
pub fn dimension_from_width(width: usize, components: usize) -> Option<usize> {
    (1..=64).find(|&p| components * (1 + block_len(p)) == width)
}

pub(crate) fn log_terms(prior: &GmmPrior, theta: ArrayView1<'_, f64>, shard: ArrayView2<'_, f64>) -> (f64, f64) {
    let p = shard.ncols();
    let l = prior.components;
    let Ok(params) = decode(theta, l, p) else {
        return (f64::NEG_INFINITY, f64::NEG_INFINITY);
    };
    let on_simplex = params.weights.iter().all(|&w| w > 0.0) && (params.weights.iter().sum::<f64>() - 1.0).abs() < 1e-8;
    if !on_simplex {
        return (f64::NEG_INFINITY, f64::NEG_INFINITY);
    }
    let mut comps = Vec::with_capacity(l);
    let mut log_prior = 0.0;
    let c = prior.concentration();
    let psi = DMatrix::<f64>::identity(p, p) * prior.iw_scale;
    for h in 0..l {
        let Some(chol) = params.covs[h].clone().cholesky() else {
            return (f64::NEG_INFINITY, f64::NEG_INFINITY);
        };
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let inv = chol.inverse();
        let quad = (params.means[h].transpose() * &inv * &params.means[h])[(0, 0)];
        log_prior += (c - 1.0) * params.weights[h].ln();
        log_prior += -0.5 * (p as f64 * (1.0 / prior.mean_precision).ln() + log_det) - 0.5 * prior.mean_precision * quad;
        log_prior += -0.5 * (prior.iw_df + p as f64 + 1.0) * log_det - 0.5 * (&psi * &inv).trace();
        match Component::new(params.weights[h], &params.means[h], &params.covs[h]) {
            Ok(comp) => comps.push(comp),
            Err(_) => return (f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }
    let mut scratch = vec![0.0; p];
    let mut logw = vec![0.0; l];
    let loglik = shard
        .rows()
        .into_iter()
        .map(|y| {
            for (lw, comp) in logw.iter_mut().zip(&comps) {
                *lw = comp.log_weighted_density(y, &mut scratch);
            }
            log_sum_exp(&logw)
        })
        .sum();
    (loglik, log_prior)
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Reorders the components of every draw by the first coordinate of their
/// means, which removes label switching when components are well separated.
pub fn relabel_by_first_mean(draws: &DrawSet, components: usize) -> Result<DrawSet> {
    let width = draws.draws().ncols();
    let p = dimension_from_width(width, components)
        .ok_or_else(|| Error::InvalidInput(format!("{width} columns do not fit a {components}-component mixture layout")))?;
    let blk = block_len(p);
    let mut out = draws.draws().to_owned();
    for mut row in out.rows_mut() {
        let src = row.to_owned();
        let mut order: Vec<usize> = (0..components).collect();
        order.sort_by(|&a, &b| src[components + a * blk].total_cmp(&src[components + b * blk]));
        for (dst, &h) in order.iter().enumerate() {
            row[dst] = src[h];
            for e in 0..blk {
                row[components + dst * blk + e] = src[components + h * blk + e];
            }
        }
    }
    Ok(draws.with_parts(out, draws.names().to_vec(), None))
}

/// Draws `n` observations from a Gaussian mixture.
pub fn simulate<R: Rng + ?Sized>(rng: &mut R, n: usize, weights: &[f64], means: &[Vec<f64>], covs: &[DMatrix<f64>]) -> Result<Array2<f64>> {
    let p = means.first().map_or(0, Vec::len);
    if weights.len() != means.len() || weights.len() != covs.len() {
        return Err(Error::DimensionMismatch { expected: weights.len(), found: means.len().min(covs.len()) });
    }
    let logw: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut scratch = vec![0.0; weights.len()];
    let mean_vecs: Vec<DVector<f64>> = means.iter().map(|m| DVector::from_vec(m.clone())).collect();
    let mut data = Array2::zeros((n, p));
    for mut row in data.rows_mut() {
        let h = categorical_from_log(rng, &logw, &mut scratch);
        let y = multivariate_normal(rng, &mean_vecs[h], &covs[h])?;
        for a in 0..p {
            row[a] = y[a];
        }
    }
    Ok(data)
}
