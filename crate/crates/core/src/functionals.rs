//! Functionals of the model parameters and their pushforward through draws.
//!
//! A functional reads named columns of a [`DrawSet`] and maps every draw to
//! one or more outputs. The built-ins cover the quantities reported for the
//! bundled models; they are selected by name in configuration files.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::DrawSet;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Functional {
    /// Every parameter, unchanged.
    Identity,
    /// One named parameter.
    Select { parameter: String },
    /// `scale·θ + shift` applied to every parameter.
    Affine { scale: f64, shift: f64 },
    /// Correlation between the first two coordinates of mixture component
    /// `component` (1-based).
    Correlation { component: usize },
    /// Gaussian mixture density at the point `(x, …, x)`.
    MixtureDensity { x: f64 },
    /// `pr(x_dimension = category)` under the latent-class model.
    ParafacMarginal { dimension: usize, category: usize },
    /// Normal location-mixture density at `x`.
    DpmDensity { x: f64 },
}

impl Functional {
    pub fn name(&self) -> String {
        match self {
            Functional::Identity => "identity".into(),
            Functional::Select { parameter } => parameter.clone(),
            Functional::Affine { scale, shift } => format!("affine({scale},{shift})"),
            Functional::Correlation { component } => format!("rho{component}"),
            Functional::MixtureDensity { x } => format!("g({x})"),
            Functional::ParafacMarginal { dimension, category } => format!("pr(x{dimension}={category})"),
            Functional::DpmDensity { x } => format!("f({x})"),
        }
    }

    /// Resolves the functional against a parameter layout.
    fn bind(&self, names: &[String]) -> Result<Bound> {
        let col = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::InvalidInput(format!("{} needs parameter '{name}', which the draws do not have", self.name())))
        };
        let count = |prefix: &str| (1..).take_while(|h| names.iter().any(|n| *n == format!("{prefix}{h}"))).count();
        Ok(match self {
            Functional::Identity => Bound::Identity,
            Functional::Affine { scale, shift } => Bound::Affine(*scale, *shift),
            Functional::Select { parameter } => Bound::Column(col(parameter)?),
            Functional::Correlation { component } => {
                let l = component;
                Bound::Correlation { s11: col(&format!("sigma{l}_1_1"))?, s12: col(&format!("sigma{l}_1_2"))?, s22: col(&format!("sigma{l}_2_2"))? }
            }
            Functional::MixtureDensity { x } => {
                let l = count("pi");
                let p = count("mu1_");
                if l == 0 || p == 0 {
                    return Err(Error::InvalidInput("mixture density needs a Gaussian mixture draw layout".into()));
                }
                let mut comps = Vec::with_capacity(l);
                for h in 1..=l {
                    let means = (1..=p).map(|a| col(&format!("mu{h}_{a}"))).collect::<Result<Vec<_>>>()?;
                    let mut cov = vec![0; p * p];
                    for a in 1..=p {
                        for b in a..=p {
                            let c = col(&format!("sigma{h}_{a}_{b}"))?;
                            cov[(a - 1) * p + b - 1] = c;
                            cov[(b - 1) * p + a - 1] = c;
                        }
                    }
                    comps.push(GaussCols { weight: col(&format!("pi{h}"))?, means, cov });
                }
                Bound::Mixture { x: *x, comps }
            }
            Functional::ParafacMarginal { dimension, category } => {
                let l = count("nu");
                if l == 0 {
                    return Err(Error::InvalidInput("marginal probability needs a latent-class draw layout".into()));
                }
                let pairs = (1..=l)
                    .map(|h| Ok((col(&format!("nu{h}"))?, col(&format!("psi{h}_{dimension}_{category}"))?)))
                    .collect::<Result<Vec<_>>>()?;
                Bound::WeightedSum(pairs)
            }
            Functional::DpmDensity { x } => {
                let l = count("nu");
                if l == 0 {
                    return Err(Error::InvalidInput("density needs a location-mixture draw layout".into()));
                }
                let cols = (1..=l)
                    .map(|h| Ok((col(&format!("nu{h}"))?, col(&format!("mu{h}"))?, col(&format!("sigma2_{h}"))?)))
                    .collect::<Result<Vec<_>>>()?;
                Bound::NormalMixture { x: *x, cols }
            }
        })
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn parse_numbers<T: FromStr>(args: &str, n: usize, what: &str) -> Result<Vec<T>> {
    let vals = args.split(',').map(|s| s.trim().parse::<T>()).collect::<std::result::Result<Vec<_>, _>>();
    match vals {
        Ok(v) if v.len() == n => Ok(v),
        _ => Err(Error::InvalidInput(format!("{what} expects {n} comma-separated numbers, got '{args}'"))),
    }
}

/// Registry syntax: `identity`, `select:NAME`, `affine:SCALE,SHIFT`,
/// `correlation:L`, `mixture-density:X`, `parafac-marginal:J,C`,
/// `dpm-density:X`.
impl FromStr for Functional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        match kind.trim() {
            "identity" => Ok(Functional::Identity),
            "select" if !args.is_empty() => Ok(Functional::Select { parameter: args.trim().to_string() }),
            "affine" => {
                let v = parse_numbers::<f64>(args, 2, "affine")?;
                Ok(Functional::Affine { scale: v[0], shift: v[1] })
            }
            "correlation" => Ok(Functional::Correlation { component: parse_numbers::<usize>(args, 1, "correlation")?[0] }),
            "mixture-density" => Ok(Functional::MixtureDensity { x: parse_numbers::<f64>(args, 1, "mixture-density")?[0] }),
            "parafac-marginal" => {
                let v = parse_numbers::<usize>(args, 2, "parafac-marginal")?;
                Ok(Functional::ParafacMarginal { dimension: v[0], category: v[1] })
            }
            "dpm-density" => Ok(Functional::DpmDensity { x: parse_numbers::<f64>(args, 1, "dpm-density")?[0] }),
            _ => Err(Error::InvalidInput(format!("unknown functional '{s}'"))),
        }
    }
}

/// Names accepted by [`Functional::from_str`].
pub const REGISTERED: [&str; 7] = ["identity", "select", "affine", "correlation", "mixture-density", "parafac-marginal", "dpm-density"];

struct GaussCols {
    weight: usize,
    means: Vec<usize>,
    cov: Vec<usize>,
}

enum Bound {
    Identity,
    Affine(f64, f64),
    Column(usize),
    Correlation { s11: usize, s12: usize, s22: usize },
    Mixture { x: f64, comps: Vec<GaussCols> },
    WeightedSum(Vec<(usize, usize)>),
    NormalMixture { x: f64, cols: Vec<(usize, usize, usize)> },
}

impl Bound {
    fn scalar(&self, row: ArrayView1<'_, f64>) -> Result<f64> {
        match self {
            Bound::Column(c) => Ok(row[*c]),
            Bound::Correlation { s11, s12, s22 } => {
                let (a, b) = (row[*s11], row[*s22]);
                if !(a > 0.0 && b > 0.0) {
                    return Err(Error::InvalidInput("correlation of a draw with nonpositive variance".into()));
                }
                Ok((row[*s12] / (a * b).sqrt()).clamp(-1.0, 1.0))
            }
            Bound::Mixture { x, comps } => comps.iter().map(|g| gaussian_term(row, g, *x)).sum(),
            Bound::WeightedSum(pairs) => Ok(pairs.iter().map(|&(w, v)| row[w] * row[v]).sum()),
            Bound::NormalMixture { x, cols } => Ok(cols
                .iter()
                .map(|&(w, m, v)| {
                    let (mu, var) = (row[m], row[v]);
                    row[w] * (-(x - mu) * (x - mu) / (2.0 * var) - 0.5 * (LN_2PI + var.ln())).exp()
                })
                .sum()),
            Bound::Identity | Bound::Affine(..) => unreachable!("vector functionals are handled by the caller"),
        }
    }
}

fn gaussian_term(row: ArrayView1<'_, f64>, g: &GaussCols, x: f64) -> Result<f64> {
    let p = g.means.len();
    let cov = DMatrix::from_fn(p, p, |a, b| row[g.cov[a * p + b]]);
    let chol = cov.cholesky().ok_or_else(|| Error::InvalidInput("mixture covariance is not positive definite".into()))?;
    let diff = DVector::from_iterator(p, g.means.iter().map(|&c| x - row[c]));
    let z = chol.l().solve_lower_triangular(&diff).expect("positive diagonal");
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
    Ok(row[g.weight] * (-0.5 * z.norm_squared() - log_det - 0.5 * p as f64 * LN_2PI).exp())
}

/// Applies `f` to every draw.
pub fn pushforward(draws: &DrawSet, f: &Functional) -> Result<DrawSet> {
    let bound = f.bind(draws.names())?;
    match bound {
        Bound::Identity => Ok(draws.clone()),
        Bound::Affine(a, b) => {
            let out = draws.draws().mapv(|t| a * t + b);
            Ok(draws.with_parts(out, draws.names().to_vec(), Some(f.name())))
        }
        _ => {
            let values = draws.draws().rows().into_iter().map(|r| bound.scalar(r)).collect::<Result<Vec<_>>>()?;
            let out = Array2::from_shape_vec((values.len(), 1), values).expect("one column");
            Ok(draws.with_parts(out, vec![f.name()], Some(f.name())))
        }
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], prob: f64) -> Result<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("quantile of an empty or NaN sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&v, prob))
}

/// Weighted quantile of a discrete distribution: the smallest atom whose
/// cumulative weight reaches `prob`.
pub fn weighted_quantile(atoms: &[f64], weights: &[f64], prob: f64) -> Result<f64> {
    if atoms.is_empty() || atoms.len() != weights.len() {
        return Err(Error::InvalidInput("weighted quantile needs matching non-empty atoms and weights".into()));
    }
    let mut idx: Vec<usize> = (0..atoms.len()).collect();
    idx.sort_by(|&a, &b| atoms[a].total_cmp(&atoms[b]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i] / total;
        if acc >= prob - 1e-12 {
            return Ok(atoms[i]);
        }
    }
    Ok(atoms[*idx.last().expect("non-empty")])
}

/// Pointwise credible band of a scalar functional family `x ↦ f_x(θ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CredibleBand {
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Evenly spaced grid of `points` values spanning `[lo, hi]`.
pub fn band_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}

pub const DEFAULT_BAND_POINTS: usize = 101;

/// Band from the `prob_lo` and `prob_hi` quantiles of `make(x)` pushed
/// through the draws at every grid point.
pub fn credible_band(draws: &DrawSet, xs: &[f64], make: impl Fn(f64) -> Functional, prob_lo: f64, prob_hi: f64) -> Result<CredibleBand> {
    let mut band = CredibleBand { x: xs.to_vec(), lower: Vec::new(), median: Vec::new(), upper: Vec::new() };
    for &x in xs {
        let vals: Array1<f64> = pushforward(draws, &make(x))?.into_draws().column(0).to_owned();
        let mut v = vals.to_vec();
        v.sort_by(f64::total_cmp);
        band.lower.push(quantile_sorted(&v, prob_lo));
        band.median.push(quantile_sorted(&v, 0.5));
        band.upper.push(quantile_sorted(&v, prob_hi));
    }
    Ok(band)
}
