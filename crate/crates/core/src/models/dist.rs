//! Random variates used by the samplers.
//!
//! Gamma variates with small shape are drawn in log space through
//! `Gamma(a) = Gamma(a + 1) · U^{1/a}` so Dirichlet and Beta draws stay
//! well defined when all concentrations are tiny.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// `ln X` for `X ~ Gamma(shape, 1)`.
pub fn ln_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("valid gamma shape").sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("valid gamma shape").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    }
}

/// `Gamma(shape, rate)` draw.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    ln_gamma_variate(rng, shape).exp() / rate
}

/// Dirichlet draw written into `out`.
pub fn dirichlet_into<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64], out: &mut [f64]) {
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = ln_gamma_variate(rng, a);
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; alpha.len()];
    dirichlet_into(rng, alpha, &mut out);
    out
}

/// `Beta(a, b)` draw, kept inside the open unit interval.
pub fn beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let la = ln_gamma_variate(rng, a);
    let lb = ln_gamma_variate(rng, b);
    // a / (a + b) computed as 1 / (1 + exp(lb - la))
    let v = 1.0 / (1.0 + (lb - la).exp());
    v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// `Inverse-Gamma(shape, scale)`: the reciprocal of a `Gamma(shape, scale)`
/// (rate parametrization) draw.
pub fn inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    scale / gamma(rng, shape, 1.0)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + sd * z
}

/// Draw from `N(mean, cov)`.
pub fn multivariate_normal<R: Rng + ?Sized>(rng: &mut R, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let chol = robust_cholesky(cov)?;
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| StandardNormal.sample(rng)));
    Ok(mean + chol * z)
}

/// Lower Cholesky factor, retrying with a small diagonal jitter.
pub fn robust_cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c.l());
    }
    let scale = m.diagonal().iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    let mut jitter = 1e-8 * scale;
    for _ in 0..8 {
        let mut j = m.clone();
        for i in 0..j.nrows() {
            j[(i, i)] += jitter;
        }
        if let Some(c) = j.cholesky() {
            log::debug!("cholesky needed jitter {jitter:.1e}");
            return Ok(c.l());
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical("matrix is not positive definite".into()))
}

/// `Inverse-Wishart(df, scale)` draw by the Bartlett decomposition of the
/// Wishart draw for the inverse.
pub fn inverse_wishart<R: Rng + ?Sized>(rng: &mut R, df: f64, scale: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df <= p as f64 - 1.0 {
        return Err(Error::InvalidInput(format!("inverse-Wishart needs df > {}, got {df}", p - 1)));
    }
    let scale_inv = scale
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("inverse-Wishart scale is singular".into()))?;
    let l = robust_cholesky(&scale_inv)?;
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi2 = 2.0 * gamma(rng, (df - i as f64) / 2.0, 1.0);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = l * a;
    let w = &la * la.transpose();
    let mut sigma = match w.clone().cholesky() {
        Some(c) => c.inverse(),
        None => w.try_inverse().ok_or_else(|| Error::Numerical("Wishart draw is singular".into()))?,
    };
    // exact symmetry
    for i in 0..p {
        for j in 0..i {
            let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(sigma)
}

/// Index drawn with probabilities proportional to `exp(log_weights)`.
/// `scratch` must be as long as `log_weights`.
pub fn categorical_from_log<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64], scratch: &mut [f64]) -> usize {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (s, &lw) in scratch.iter_mut().zip(log_weights) {
        total += (lw - max).exp();
        *s = total;
    }
    let u = rng.random::<f64>() * total;
    scratch.iter().position(|&c| u < c).unwrap_or(log_weights.len() - 1)
}

/// Log density of `N_p(x | mean, cov)` given the lower Cholesky factor of
/// `cov`.
pub fn mvn_log_density(x: &[f64], mean: &[f64], chol: &DMatrix<f64>) -> f64 {
    let p = x.len();
    let diff = DVector::from_iterator(p, x.iter().zip(mean).map(|(a, b)| a - b));
    let z = chol.solve_lower_triangular(&diff).expect("nonsingular factor");
    let log_det: f64 = chol.diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * z.norm_squared() - log_det - 0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln()
}
