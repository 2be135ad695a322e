//! Latent-class (probabilistic parafac) model for multivariate categorical
//! data with a truncated stick-breaking prior on the class weights.
//!
//! Category probabilities `ψ_h^(q) ~ Dirichlet(1/d_q, …, 1/d_q)` for every
//! class `h` and dimension `q`. Data are coded `1..=d_q`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dist::{categorical_from_log, dirichlet_into};
use super::gmm::log_sum_exp;
use super::stick::{draw_concentration, draw_sticks, log_stick_weights, normalized_weights, sticks_from_weights};
use super::SubsetTask;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParafacPrior {
    pub truncation: usize,
    /// Number of categories `d_q` of each dimension.
    pub categories: Vec<usize>,
    pub a_alpha: f64,
    pub b_alpha: f64,
}

impl Default for ParafacPrior {
    fn default() -> Self {
        Self { truncation: 20, categories: vec![2; 20], a_alpha: 1.0, b_alpha: 1.0 }
    }
}

impl ParafacPrior {
    pub fn validate(&self) -> Result<()> {
        if self.truncation < 1 {
            return Err(Error::InvalidInput("truncation must be at least 1".into()));
        }
        if self.categories.is_empty() || self.categories.iter().any(|&d| d < 2) {
            return Err(Error::InvalidInput("every dimension needs at least two categories".into()));
        }
        for (name, v) in [("a_alpha", self.a_alpha), ("b_alpha", self.b_alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn offsets(&self) -> Vec<usize> {
        self.categories
            .iter()
            .scan(0, |acc, &d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect()
    }

    fn total_categories(&self) -> usize {
        self.categories.iter().sum()
    }
}

pub fn parameter_names(truncation: usize, categories: &[usize]) -> Vec<String> {
    let mut names: Vec<String> = (1..=truncation).map(|h| format!("nu{h}")).collect();
    for h in 1..=truncation {
        for (q, &d) in categories.iter().enumerate() {
            names.extend((1..=d).map(|c| format!("psi{h}_{}_{c}", q + 1)));
        }
    }
    names.push("alpha".into());
    names
}

/// Dirichlet parameters of `ψ_h^(q)` given the category counts of class `h`
/// in dimension `q`.
pub fn profile_conditional(counts: &[usize], gamma: f64) -> Vec<f64> {
    let base = 1.0 / counts.len() as f64;
    counts.iter().map(|&n| base + gamma * n as f64).collect()
}

/// Converts coded categories into zero-based indices, checking their range.
fn category_indices(data: ArrayView2<'_, f64>, categories: &[usize]) -> Result<Vec<usize>> {
    if data.ncols() != categories.len() {
        return Err(Error::DimensionMismatch { expected: categories.len(), found: data.ncols() });
    }
    let mut out = Vec::with_capacity(data.len());
    for row in data.rows() {
        for (&v, &d) in row.iter().zip(categories) {
            if v.fract() != 0.0 || v < 1.0 || v > d as f64 {
                return Err(Error::InvalidInput(format!("category {v} outside 1..={d}")));
            }
            out.push(v as usize - 1);
        }
    }
    Ok(out)
}

pub(crate) fn sample(prior: &ParafacPrior, task: &SubsetTask) -> Result<Array2<f64>> {
    let data = task.shard.view();
    let cats = category_indices(data, &prior.categories)?;
    let (m, p) = data.dim();
    let l = prior.truncation;
    let offsets = prior.offsets();
    let total = prior.total_categories();
    let gamma = task.gamma;
    let mut rng = rng_from_seed(task.seed);

    // column of each observed category in the class-major tables
    let cols: Vec<usize> = cats.chunks(p).flat_map(|row| row.iter().zip(&offsets).map(|(&c, &o)| o + c)).collect();

    let mut z: Vec<usize> = (0..m).map(|_| rng.random_range(0..l)).collect();
    let mut profiles = vec![0.0; l * total];
    // log ψ arranged category-major so that one observed category touches a
    // contiguous run of classes
    let mut log_profiles = vec![0.0; total * l];
    let mut counts = vec![0usize; l * total];
    let mut sizes = vec![0usize; l];
    let mut sticks = vec![0.5; l];
    let mut alpha = 1.0;
    let mut log_nu = vec![0.0; l];
    let mut logw = vec![0.0; l];
    let mut cumul = vec![0.0; l];
    let mut alpha_buf = Vec::new();

    let mut out = Array2::zeros((task.chain.kept(), l + l * total + 1));
    let mut kept = 0;

    for t in 0..task.chain.iterations {
        counts.fill(0);
        sizes.fill(0);
        for (row, &h) in cols.chunks(p).zip(&z) {
            sizes[h] += 1;
            let base = h * total;
            for &c in row {
                counts[base + c] += 1;
            }
        }
        for h in 0..l {
            for (q, &d) in prior.categories.iter().enumerate() {
                let s = h * total + offsets[q];
                alpha_buf.clear();
                alpha_buf.extend(profile_conditional(&counts[s..s + d], gamma));
                dirichlet_into(&mut rng, &alpha_buf, &mut profiles[s..s + d]);
            }
        }
        draw_sticks(&mut rng, &sizes, alpha, gamma, &mut sticks);
        alpha = draw_concentration(&mut rng, prior.a_alpha, prior.b_alpha, &sticks);

        log_stick_weights(&sticks, &mut log_nu);
        for h in 0..l {
            for c in 0..total {
                log_profiles[c * l + h] = profiles[h * total + c].max(f64::MIN_POSITIVE).ln();
            }
        }
        for (row, zi) in cols.chunks(p).zip(z.iter_mut()) {
            logw.copy_from_slice(&log_nu);
            for &c in row {
                let lp = &log_profiles[c * l..(c + 1) * l];
                for (w, v) in logw.iter_mut().zip(lp) {
                    *w += v;
                }
            }
            *zi = categorical_from_log(&mut rng, &logw, &mut cumul);
        }

        if task.chain.keeps(t) {
            let mut row = out.row_mut(kept);
            for (h, w) in normalized_weights(&sticks).into_iter().enumerate() {
                row[h] = w;
            }
            for (i, &v) in profiles.iter().enumerate() {
                row[l + i] = v;
            }
            row[l + l * total] = alpha;
            kept += 1;
        }
    }
    Ok(out)
}

/// `pr(x_q = c) = Σ_h ν_h ψ_{h c}^(q)` for one draw; `dimension` and
/// `category` are 1-based.
pub fn marginal_probability(theta: ArrayView1<'_, f64>, truncation: usize, categories: &[usize], dimension: usize, category: usize) -> Result<f64> {
    let total: usize = categories.iter().sum();
    let expected = truncation + truncation * total + 1;
    if theta.len() != expected {
        return Err(Error::DimensionMismatch { expected, found: theta.len() });
    }
    if dimension == 0 || dimension > categories.len() || category == 0 || category > categories[dimension - 1] {
        return Err(Error::InvalidInput(format!("no category {category} in dimension {dimension}")));
    }
    let offset: usize = categories[..dimension - 1].iter().sum::<usize>() + category - 1;
    Ok((0..truncation).map(|h| theta[h] * theta[truncation + h * total + offset]).sum())
}

pub(crate) fn log_terms(prior: &ParafacPrior, theta: ArrayView1<'_, f64>, shard: ArrayView2<'_, f64>) -> (f64, f64) {
    let l = prior.truncation;
    let total = prior.total_categories();
    let offsets = prior.offsets();
    let Ok(cats) = category_indices(shard, &prior.categories) else {
        return (f64::NEG_INFINITY, f64::NEG_INFINITY);
    };
    let w = theta.slice(ndarray::s![..l]);
    let alpha = theta[l + l * total];
    let prof = |h: usize, c: usize| theta[l + h * total + c];
    let mut valid = w.iter().all(|&v| v >= 0.0) && (w.sum() - 1.0).abs() < 1e-8 && alpha > 0.0;
    for h in 0..l {
        for (q, &d) in prior.categories.iter().enumerate() {
            let s: f64 = (0..d).map(|c| prof(h, offsets[q] + c)).sum();
            valid &= (s - 1.0).abs() < 1e-8 && (0..d).all(|c| prof(h, offsets[q] + c) > 0.0);
        }
    }
    if !valid {
        return (f64::NEG_INFINITY, f64::NEG_INFINITY);
    }
    let p = prior.categories.len();
    let mut logw = vec![0.0; l];
    let loglik = cats
        .chunks(p)
        .map(|row| {
            for h in 0..l {
                logw[h] = w[h].ln() + row.iter().zip(&offsets).map(|(&c, &o)| prof(h, o + c).ln()).sum::<f64>();
            }
            log_sum_exp(&logw)
        })
        .sum();

    let mut log_prior = (prior.a_alpha - 1.0) * alpha.ln() - prior.b_alpha * alpha;
    for h in 0..l {
        for (q, &d) in prior.categories.iter().enumerate() {
            let a = 1.0 / d as f64;
            log_prior += (0..d).map(|c| (a - 1.0) * prof(h, offsets[q] + c).ln()).sum::<f64>();
        }
    }
    let sticks = sticks_from_weights(&w.to_vec());
    for &v in &sticks[..l - 1] {
        log_prior += alpha.ln() + (alpha - 1.0) * (-v).ln_1p();
    }
    (loglik, log_prior)
}

/// Category probabilities of one population: `profile[q][c]`.
pub type Profile = Vec<Vec<f64>>;

/// `n` rows from a mixture of populations with independent dimensions.
pub fn simulate<R: Rng + ?Sized>(rng: &mut R, n: usize, weights: &[f64], profiles: &[Profile]) -> Array2<f64> {
    let p = profiles.first().map_or(0, Vec::len);
    let logw: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut scratch = vec![0.0; weights.len()];
    let mut data = Array2::zeros((n, p));
    for mut row in data.rows_mut() {
        let h = categorical_from_log(rng, &logw, &mut scratch);
        for (q, probs) in profiles[h].iter().enumerate() {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let c = probs
                .iter()
                .position(|&pr| {
                    acc += pr;
                    u < acc
                })
                .unwrap_or(probs.len() - 1);
            row[q] = (c + 1) as f64;
        }
    }
    data
}

/// Two equally likely populations over `p ≥ 14` binary dimensions: dimensions
/// 2, 4, 12 and 14 carry opposite category probabilities in the two
/// populations, every other dimension is uniform.
pub fn two_population_profiles(p: usize) -> Vec<Profile> {
    let first = [(2, 0.20), (4, 0.25), (12, 0.80), (14, 0.75)];
    let make = |flip: bool| -> Profile {
        (1..=p)
            .map(|q| match first.iter().find(|(d, _)| *d == q) {
                Some(&(_, pr)) => {
                    let pr = if flip { 1.0 - pr } else { pr };
                    vec![pr, 1.0 - pr]
                }
                None => vec![0.5, 0.5],
            })
            .collect()
    };
    vec![make(false), make(true)]
}
