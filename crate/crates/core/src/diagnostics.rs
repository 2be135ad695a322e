//! Density estimates, the total-variation accuracy score and contraction
//! checks against a known truth.
//!
//! Densities are binned Gaussian kernel estimates on a regular lattice in one
//! or two dimensions. Weighted inputs (barycenter measures) are binned with
//! their weights and use the Kish effective sample size in the bandwidth
//! rule.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{wasp_from_samples, WaspOptions};
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::models::{logistic, ChainSettings, LogisticPrior, ModelSpec, SubsetTask};
use crate::orchestrator::{partition, run_subsets, PartitionStrategy};
use crate::rng::{rng_from_seed, seed_path};

pub const BINS_1D: usize = 512;
pub const BINS_2D: usize = 128;
/// Lattice padding beyond the pooled data range, in bandwidths.
pub const PADDING_BANDWIDTHS: f64 = 3.0;
/// Kernel truncation, in bandwidths.
const KERNEL_REACH: f64 = 6.0;
pub const MIN_DISTINCT_ATOMS: usize = 10;

/// Regular evaluation lattice, one axis per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
}

impl Lattice {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        if lower.is_empty() || lower.len() > 2 || lower.len() != upper.len() || lower.len() != points.len() {
            return Err(Error::InvalidInput("lattice needs one or two matching axes".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l)) || points.iter().any(|&n| n < 2) {
            return Err(Error::InvalidInput("lattice axes need upper > lower and at least two points".into()));
        }
        Ok(Self { lower, upper, points })
    }

    /// Lattice spanning every measure's atoms plus three of the widest
    /// bandwidth on each side, with the default resolution.
    pub fn covering(measures: &[&EmpiricalMeasure], bandwidths: &[Vec<f64>]) -> Result<Self> {
        let q = measures.first().map_or(0, |m| m.dim());
        if q == 0 || q > 2 {
            return Err(Error::InvalidInput(format!("densities are estimated in one or two dimensions, got {q}")));
        }
        if measures.iter().any(|m| m.dim() != q) {
            return Err(Error::InvalidInput("measures have different dimensions".into()));
        }
        let bins = if q == 1 { BINS_1D } else { BINS_2D };
        let mut lower = vec![f64::INFINITY; q];
        let mut upper = vec![f64::NEG_INFINITY; q];
        for m in measures {
            for row in m.atoms().rows() {
                for r in 0..q {
                    lower[r] = lower[r].min(row[r]);
                    upper[r] = upper[r].max(row[r]);
                }
            }
        }
        for r in 0..q {
            let pad = PADDING_BANDWIDTHS * bandwidths.iter().map(|h| h[r]).fold(0.0, f64::max);
            lower[r] -= pad;
            upper[r] += pad;
        }
        Self::new(lower, upper, vec![bins; q])
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, r: usize) -> f64 {
        (self.upper[r] - self.lower[r]) / (self.points[r] - 1) as f64
    }

    pub fn coordinate(&self, r: usize, i: usize) -> f64 {
        self.lower[r] + i as f64 * self.spacing(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule in one dimension, its bivariate analogue otherwise.
    Auto,
    Fixed(Vec<f64>),
}

/// Density values on a lattice; in two dimensions stored row-major with the
/// second coordinate fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub lattice: Lattice,
    pub values: Vec<f64>,
    pub bandwidths: Vec<f64>,
}

impl DensityEstimate {
    /// Trapezoid-rule integral of `f` over the lattice.
    fn trapezoid(&self, f: impl Fn(usize) -> f64) -> f64 {
        let lat = &self.lattice;
        let weight = |r: usize, i: usize| if i == 0 || i + 1 == lat.points[r] { 0.5 } else { 1.0 };
        match lat.dim() {
            1 => (0..lat.points[0]).map(|i| weight(0, i) * f(i)).sum::<f64>() * lat.spacing(0),
            _ => {
                let n1 = lat.points[1];
                let mut total = 0.0;
                for i in 0..lat.points[0] {
                    for j in 0..n1 {
                        total += weight(0, i) * weight(1, j) * f(i * n1 + j);
                    }
                }
                total * lat.spacing(0) * lat.spacing(1)
            }
        }
    }

    pub fn integral(&self) -> f64 {
        self.trapezoid(|i| self.values[i])
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

fn distinct_atoms(m: &EmpiricalMeasure) -> usize {
    let mut rows: Vec<Vec<f64>> = m
        .atoms()
        .rows()
        .into_iter()
        .zip(m.weights())
        .filter(|(_, &w)| w > 0.0)
        .map(|(r, _)| r.to_vec())
        .collect();
    rows.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    rows.dedup();
    rows.len()
}

/// Kish effective sample size `1 / Σ w²` of normalized weights.
pub fn effective_size(m: &EmpiricalMeasure) -> f64 {
    1.0 / m.weights().iter().map(|w| w * w).sum::<f64>()
}

fn weighted_quantile_col(values: &[(f64, f64)], prob: f64) -> f64 {
    let mut acc = 0.0;
    for &(x, w) in values {
        acc += w;
        if acc >= prob {
            return x;
        }
    }
    values.last().map_or(0.0, |v| v.0)
}

/// Rule-of-thumb bandwidths.
pub fn silverman_bandwidth(m: &EmpiricalMeasure) -> Result<Vec<f64>> {
    check_input(m)?;
    let n = effective_size(m);
    let q = m.dim();
    let w = m.weights();
    let atoms = m.atoms();
    (0..q)
        .map(|r| {
            let col = atoms.column(r);
            let mean: f64 = col.iter().zip(w).map(|(x, w)| x * w).sum();
            let sd = col.iter().zip(w).map(|(x, w)| w * (x - mean) * (x - mean)).sum::<f64>().sqrt();
            let h = if q == 1 {
                let mut pairs: Vec<(f64, f64)> = col.iter().copied().zip(w.iter().copied()).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let iqr = weighted_quantile_col(&pairs, 0.75) - weighted_quantile_col(&pairs, 0.25);
                let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
                0.9 * spread * n.powf(-0.2)
            } else {
                sd * n.powf(-1.0 / 6.0)
            };
            if h > 0.0 && h.is_finite() {
                Ok(h)
            } else {
                Err(Error::InvalidInput(format!("dimension {} has no spread; cannot pick a bandwidth", r + 1)))
            }
        })
        .collect()
}

fn check_input(m: &EmpiricalMeasure) -> Result<()> {
    if m.dim() == 0 || m.dim() > 2 {
        return Err(Error::InvalidInput(format!("densities are estimated in one or two dimensions, got {}", m.dim())));
    }
    let distinct = distinct_atoms(m);
    if distinct < MIN_DISTINCT_ATOMS {
        return Err(Error::InvalidInput(format!(
            "density estimate needs at least {MIN_DISTINCT_ATOMS} distinct atoms with positive weight, got {distinct}"
        )));
    }
    Ok(())
}

/// Spreads weight `w` at coordinate `x` over the two nearest lattice nodes.
fn linear_bin(lat: &Lattice, r: usize, x: f64) -> Option<(usize, f64)> {
    let t = (x - lat.lower[r]) / lat.spacing(r);
    if !(t >= 0.0 && t <= (lat.points[r] - 1) as f64) {
        return None;
    }
    let i = (t.floor() as usize).min(lat.points[r] - 2);
    Some((i, t - i as f64))
}

/// Gaussian kernel weights at lattice offsets `0..=reach`.
fn kernel(h: f64, spacing: f64, points: usize) -> Vec<f64> {
    let reach = ((KERNEL_REACH * h / spacing).ceil() as usize).min(points - 1);
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h);
    (0..=reach)
        .map(|l| {
            let d = l as f64 * spacing / h;
            norm * (-0.5 * d * d).exp()
        })
        .collect()
}

fn convolve(input: &[f64], kern: &[f64], out: &mut [f64]) {
    let n = input.len();
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(kern.len() - 1);
        let hi = (i + kern.len()).min(n);
        *o = (lo..hi).map(|l| input[l] * kern[i.abs_diff(l)]).sum();
    }
}

/// Binned Gaussian kernel density estimate of a (weighted) measure.
pub fn kde(m: &EmpiricalMeasure, lattice: &Lattice, bandwidth: &Bandwidth) -> Result<DensityEstimate> {
    check_input(m)?;
    if m.dim() != lattice.dim() {
        return Err(Error::DimensionMismatch { expected: lattice.dim(), found: m.dim() });
    }
    let h = match bandwidth {
        Bandwidth::Auto => silverman_bandwidth(m)?,
        Bandwidth::Fixed(h) => {
            if h.len() != m.dim() || h.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::InvalidInput("fixed bandwidths must be positive, one per dimension".into()));
            }
            h.clone()
        }
    };
    let values = match m.dim() {
        1 => {
            let n = lattice.points[0];
            let mut counts = vec![0.0; n];
            for (x, &w) in m.atoms().column(0).iter().zip(m.weights()) {
                if let Some((i, f)) = linear_bin(lattice, 0, *x) {
                    counts[i] += w * (1.0 - f);
                    counts[i + 1] += w * f;
                }
            }
            let mut out = vec![0.0; n];
            convolve(&counts, &kernel(h[0], lattice.spacing(0), n), &mut out);
            out
        }
        _ => {
            let (n0, n1) = (lattice.points[0], lattice.points[1]);
            let mut counts = Array2::<f64>::zeros((n0, n1));
            for (row, &w) in m.atoms().rows().into_iter().zip(m.weights()) {
                if let (Some((i, fi)), Some((j, fj))) = (linear_bin(lattice, 0, row[0]), linear_bin(lattice, 1, row[1])) {
                    counts[[i, j]] += w * (1.0 - fi) * (1.0 - fj);
                    counts[[i + 1, j]] += w * fi * (1.0 - fj);
                    counts[[i, j + 1]] += w * (1.0 - fi) * fj;
                    counts[[i + 1, j + 1]] += w * fi * fj;
                }
            }
            let k0 = kernel(h[0], lattice.spacing(0), n0);
            let k1 = kernel(h[1], lattice.spacing(1), n1);
            let mut pass = Array2::<f64>::zeros((n0, n1));
            let mut buf = vec![0.0; n0.max(n1)];
            for i in 0..n0 {
                let src = counts.row(i).to_vec();
                convolve(&src, &k1, &mut buf[..n1]);
                pass.row_mut(i).iter_mut().zip(&buf).for_each(|(p, b)| *p = *b);
            }
            let mut out = Array2::<f64>::zeros((n0, n1));
            for j in 0..n1 {
                let src = pass.column(j).to_vec();
                convolve(&src, &k0, &mut buf[..n0]);
                out.column_mut(j).iter_mut().zip(&buf).for_each(|(o, b)| *o = *b);
            }
            out.into_raw_vec_and_offset().0
        }
    };
    Ok(DensityEstimate { lattice: lattice.clone(), values, bandwidths: h })
}

/// `1 − ½ ∫ |p̂ − p|` by the trapezoid rule, clamped to `[0, 1]`.
pub fn tv_accuracy(estimate: &DensityEstimate, reference: &DensityEstimate) -> Result<f64> {
    if estimate.lattice != reference.lattice {
        return Err(Error::InvalidInput("densities live on different lattices".into()));
    }
    let l1 = estimate.trapezoid(|i| (estimate.values[i] - reference.values[i]).abs());
    Ok((1.0 - 0.5 * l1).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub bandwidths: [Vec<f64>; 2],
    pub grid: Lattice,
}

/// Accuracy of `estimate` against `reference`, each smoothed with its own
/// rule-of-thumb bandwidth on a shared lattice.
pub fn accuracy(estimate: &EmpiricalMeasure, reference: &EmpiricalMeasure) -> Result<AccuracyReport> {
    let he = silverman_bandwidth(estimate)?;
    let hr = silverman_bandwidth(reference)?;
    let lattice = Lattice::covering(&[estimate, reference], &[he.clone(), hr.clone()])?;
    let pe = kde(estimate, &lattice, &Bandwidth::Fixed(he.clone()))?;
    let pr = kde(reference, &lattice, &Bandwidth::Fixed(hr.clone()))?;
    Ok(AccuracyReport { accuracy: tv_accuracy(&pe, &pr)?, bandwidths: [he, hr], grid: lattice })
}

/// `W2` between a measure and the point mass at `truth`.
pub fn w2_to_truth(m: &EmpiricalMeasure, truth: &[f64]) -> Result<f64> {
    if truth.len() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), found: truth.len() });
    }
    let sq: f64 = m
        .atoms()
        .rows()
        .into_iter()
        .zip(m.weights())
        .map(|(row, w)| w * row.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok(sq.sqrt())
}

/// Settings of a contraction study for the logistic model.
#[derive(Debug, Clone)]
pub struct ContractionConfig {
    pub theta0: Vec<f64>,
    pub m_grid: Vec<usize>,
    pub k: usize,
    pub replications: usize,
    pub seed: u64,
    pub chain: ChainSettings,
    pub prior: LogisticPrior,
    /// Keep this many evenly spaced draws per subset before combining.
    pub draws_per_subset: Option<usize>,
    pub wasp: WaspOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionRow {
    pub m: usize,
    pub mean_w2: f64,
    pub se_w2: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub rows: Vec<ContractionRow>,
    /// Whether the mean distance never increases along the `m` grid.
    pub monotone: bool,
    /// Last mean divided by the first.
    pub ratio_last_first: f64,
}

impl ContractionReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["m", "mean_w2", "se_w2", "replications"])?;
        for r in &self.rows {
            wtr.write_record([r.m.to_string(), format!("{:.10e}", r.mean_w2), format!("{:.10e}", r.se_w2), r.values.len().to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn contraction_replication(cfg: &ContractionConfig, spec: &ModelSpec, m: usize, base: u64) -> Result<f64> {
    let n = cfg.k * m;
    let data = logistic::simulate(&mut rng_from_seed(seed_path(base, &[2])), n, &cfg.theta0);
    let plan = partition(data.view(), cfg.k, &PartitionStrategy::Random, seed_path(base, &[0]))?;
    let tasks: Vec<SubsetTask> = plan
        .shards(data.view())
        .into_iter()
        .enumerate()
        .map(|(j, shard)| SubsetTask::with_auto_gamma(spec.clone(), shard, cfg.chain, seed_path(base, &[1, j as u64]), j, cfg.k, n))
        .collect();
    let draws = run_subsets(&tasks, 1)?;
    let kept: Vec<Array2<f64>> = draws
        .iter()
        .map(|d| match cfg.draws_per_subset {
            Some(s) if s > 0 && s < d.len() => d.thinned(d.len().div_ceil(s)).into_draws(),
            _ => d.draws().to_owned(),
        })
        .collect();
    let views: Vec<_> = kept.iter().map(|a| a.view()).collect();
    let est = wasp_from_samples(&views, &cfg.wasp)?;
    w2_to_truth(&est.measure, &cfg.theta0)
}

/// Mean `W2` distance between the combined posterior and the truth for
/// simulated logistic data with `k·m` rows, for each subset size `m`.
pub fn contraction_report(cfg: &ContractionConfig) -> Result<ContractionReport> {
    if cfg.m_grid.is_empty() || cfg.m_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("subset sizes must be a non-empty increasing list".into()));
    }
    if cfg.k == 0 || cfg.replications == 0 {
        return Err(Error::InvalidInput("k and the replication count must be positive".into()));
    }
    cfg.prior.validate()?;
    let spec = ModelSpec::Logistic(cfg.prior.clone());
    let mut rows = Vec::with_capacity(cfg.m_grid.len());
    for (mi, &m) in cfg.m_grid.iter().enumerate() {
        // replications own their seeds, so running them in parallel keeps the table fixed
        let values = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| contraction_replication(cfg, &spec, m, seed_path(cfg.seed, &[rep as u64, mi as u64])))
            .collect::<Result<Vec<f64>>>()?;
        let r = values.len() as f64;
        let mean = values.iter().sum::<f64>() / r;
        let se = if values.len() > 1 { (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0) / r).sqrt() } else { 0.0 };
        rows.push(ContractionRow { m, mean_w2: mean, se_w2: se, values });
    }
    let monotone = rows.windows(2).all(|w| w[1].mean_w2 <= w[0].mean_w2);
    let ratio_last_first = rows.last().map_or(1.0, |l| l.mean_w2) / rows[0].mean_w2;
    Ok(ContractionReport { rows, monotone, ratio_last_first })
}
