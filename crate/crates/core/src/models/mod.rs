//! Subset-posterior samplers with tempered likelihoods.
//!
//! A subset posterior raises the likelihood of its shard to a power `γ`
//! (usually the number of subsets) so that its spread matches the full-data
//! posterior. Logistic regression is sampled by random-walk Metropolis; the
//! mixture models use Gibbs samplers whose conjugate updates scale every
//! sufficient statistic by `γ`.

pub mod dist;
pub mod dpm;
pub mod gmm;
pub mod logistic;
pub mod parafac;
pub mod stick;

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RNG_FAMILY;

pub use dpm::DpmPrior;
pub use gmm::GmmPrior;
pub use logistic::LogisticPrior;
pub use parafac::ParafacPrior;

/// A model together with its prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Binary regression; shard columns are the design followed by the 0/1
    /// response.
    Logistic(LogisticPrior),
    /// Finite Gaussian mixture; shard rows are observations in `R^p`.
    Gmm(GmmPrior),
    /// Truncated Dirichlet-process mixture of normals for scalar data.
    DpmDensity(DpmPrior),
    /// Latent-class model for categorical vectors coded `1..=d_q`.
    Parafac(ParafacPrior),
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Logistic(_) => "logistic",
            ModelSpec::Gmm(_) => "gmm",
            ModelSpec::DpmDensity(_) => "dpm-density",
            ModelSpec::Parafac(_) => "parafac",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Logistic(p) => p.validate(),
            ModelSpec::Gmm(p) => p.validate(),
            ModelSpec::DpmDensity(p) => p.validate(),
            ModelSpec::Parafac(p) => p.validate(),
        }
    }

    /// Names of the sampled parameters for data with `data_cols` columns.
    pub fn parameter_names(&self, data_cols: usize) -> Vec<String> {
        match self {
            ModelSpec::Logistic(_) => logistic::parameter_names(data_cols.saturating_sub(1)),
            ModelSpec::Gmm(p) => gmm::parameter_names(p.components, data_cols),
            ModelSpec::DpmDensity(p) => dpm::parameter_names(p.truncation),
            ModelSpec::Parafac(p) => parafac::parameter_names(p.truncation, &p.categories),
        }
    }
}

/// Length and thinning of a Markov chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        Self { iterations: 10_000, burn_in: 5_000, thin: 5 }
    }
}

impl ChainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidInput("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidInput(format!(
                "burn-in ({}) must be below the iteration count ({})",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn kept(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    /// Whether iteration `t` (0-based) is retained.
    pub fn keeps(&self, t: usize) -> bool {
        t >= self.burn_in && (t - self.burn_in + 1) % self.thin == 0 && (t - self.burn_in) / self.thin < self.kept()
    }
}

/// Everything needed to sample one subset posterior.
#[derive(Debug, Clone)]
pub struct SubsetTask {
    pub spec: ModelSpec,
    pub shard: Array2<f64>,
    pub gamma: f64,
    pub chain: ChainSettings,
    pub seed: u64,
    pub subset_id: usize,
    pub k: usize,
    pub n: usize,
}

impl SubsetTask {
    /// Task with `γ = n/m`, the default tempering.
    pub fn with_auto_gamma(spec: ModelSpec, shard: Array2<f64>, chain: ChainSettings, seed: u64, subset_id: usize, k: usize, n: usize) -> Self {
        let gamma = n as f64 / shard.nrows().max(1) as f64;
        Self { spec, shard, gamma, chain, seed, subset_id, k, n }
    }

    pub fn m(&self) -> usize {
        self.shard.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.chain.validate()?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("tempering power must be positive, got {}", self.gamma)));
        }
        if self.shard.nrows() == 0 {
            return Err(Error::InvalidInput(format!("subset {} has no rows", self.subset_id)));
        }
        if self.shard.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("subset {} has non-finite data", self.subset_id)));
        }
        Ok(())
    }

    fn provenance(&self, acceptance_rate: Option<f64>) -> Provenance {
        Provenance {
            model: self.spec.kind().to_string(),
            subset_id: self.subset_id,
            gamma: self.gamma,
            seed: self.seed,
            iterations: self.chain.iterations,
            burn_in: self.chain.burn_in,
            thin: self.chain.thin,
            m: self.m(),
            k: self.k,
            acceptance_rate,
            functional: None,
            rng: RNG_FAMILY.to_string(),
        }
    }
}

/// Where a set of draws came from; serialized as the manifest next to the
/// draw CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub subset_id: usize,
    pub gamma: f64,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub m: usize,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acceptance_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub functional: Option<String>,
    pub rng: String,
}

/// Posterior draws, one row per retained iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawSet {
    draws: Array2<f64>,
    names: Vec<String>,
    provenance: Provenance,
}

impl DrawSet {
    pub fn new(draws: Array2<f64>, names: Vec<String>, provenance: Provenance) -> Result<Self> {
        if names.len() != draws.ncols() {
            return Err(Error::DimensionMismatch { expected: draws.ncols(), found: names.len() });
        }
        Ok(Self { draws, names, provenance })
    }

    pub fn draws(&self) -> ArrayView2<'_, f64> {
        self.draws.view()
    }

    pub fn into_draws(self) -> Array2<f64> {
        self.draws
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column index of a named parameter.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.draws.row(i)
    }

    /// Keeps every `step`-th draw starting from the first.
    pub fn thinned(&self, step: usize) -> DrawSet {
        let step = step.max(1);
        let rows: Vec<usize> = (0..self.len()).step_by(step).collect();
        self.select_rows(&rows)
    }

    pub fn select_rows(&self, rows: &[usize]) -> DrawSet {
        let draws = self.draws.select(ndarray::Axis(0), rows);
        DrawSet { draws, names: self.names.clone(), provenance: self.provenance.clone() }
    }

    pub(crate) fn with_parts(&self, draws: Array2<f64>, names: Vec<String>, functional: Option<String>) -> DrawSet {
        let mut provenance = self.provenance.clone();
        if functional.is_some() {
            provenance.functional = functional;
        }
        DrawSet { draws, names, provenance }
    }

    /// Header of parameter names, then one row per draw.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(&self.names)?;
        for row in self.draws.rows() {
            wtr.write_record(row.iter().map(|x| format!("{x:.16e}")))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads draws written by [`DrawSet::write_csv`] with the given manifest.
    pub fn read_csv<R: Read>(input: R, provenance: Provenance) -> Result<Self> {
        let (names, draws) = read_matrix_csv(input)?;
        Self::new(draws, names, provenance)
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let manifest = serde_json::to_string_pretty(&self.provenance)?;
        std::fs::write(dir.join(format!("{stem}.json")), manifest + "\n")?;
        Ok(())
    }

    /// Reads a draw CSV and, when present, its JSON manifest.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let manifest = csv_path.with_extension("json");
        let provenance = if manifest.exists() {
            serde_json::from_str(&std::fs::read_to_string(&manifest)?)?
        } else {
            Provenance {
                model: "external".into(),
                subset_id: 0,
                gamma: 1.0,
                seed: 0,
                iterations: 0,
                burn_in: 0,
                thin: 1,
                m: 0,
                k: 1,
                acceptance_rate: None,
                functional: None,
                rng: RNG_FAMILY.to_string(),
            }
        };
        Self::read_csv(std::fs::File::open(csv_path)?, provenance)
    }
}

/// Reads a numeric CSV with a header row.
pub fn read_matrix_csv<R: Read>(input: R) -> Result<(Vec<String>, Array2<f64>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let names: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::DimensionMismatch { expected: names.len(), found: rec.len() });
        }
        values.extend(crate::measures::parse_row(&rec)?);
        rows += 1;
    }
    let m = Array2::from_shape_vec((rows, names.len()), values).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok((names, m))
}

/// Writes a numeric matrix with a header row.
pub fn write_matrix_csv<W: Write>(out: W, names: &[String], values: ArrayView2<'_, f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(names)?;
    for row in values.rows() {
        wtr.write_record(row.iter().map(|x| format!("{x:.16e}")))?;
    }
    wtr.flush()?;
    Ok(())
}

/// `γ·Σ log p(y_i | θ) + log π(θ)` up to a constant; `−∞` outside the
/// parameter space.
pub fn tempered_log_posterior(spec: &ModelSpec, theta: ArrayView1<'_, f64>, shard: ArrayView2<'_, f64>, gamma: f64) -> Result<f64> {
    let (loglik, logprior) = log_likelihood_and_prior(spec, theta, shard)?;
    if loglik == f64::NEG_INFINITY || logprior == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(gamma * loglik + logprior)
}

/// Untempered log-likelihood and log-prior of one parameter vector.
pub fn log_likelihood_and_prior(spec: &ModelSpec, theta: ArrayView1<'_, f64>, shard: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    let expected = spec.parameter_names(shard.ncols()).len();
    if theta.len() != expected {
        return Err(Error::DimensionMismatch { expected, found: theta.len() });
    }
    Ok(match spec {
        ModelSpec::Logistic(p) => logistic::log_terms(p, theta, shard),
        ModelSpec::Gmm(p) => gmm::log_terms(p, theta, shard),
        ModelSpec::DpmDensity(p) => dpm::log_terms(p, theta, shard),
        ModelSpec::Parafac(p) => parafac::log_terms(p, theta, shard),
    })
}

/// Runs the sampler that matches the task's model.
pub fn sample_subset(task: &SubsetTask) -> Result<DrawSet> {
    task.validate()?;
    let (draws, acceptance) = match &task.spec {
        ModelSpec::Logistic(p) => {
            let (d, acc) = logistic::sample(p, task)?;
            (d, Some(acc))
        }
        ModelSpec::Gmm(p) => (gmm::sample(p, task)?, None),
        ModelSpec::DpmDensity(p) => (dpm::sample(p, task)?, None),
        ModelSpec::Parafac(p) => (parafac::sample(p, task)?, None),
    };
    let names = task.spec.parameter_names(task.shard.ncols());
    DrawSet::new(draws, names, task.provenance(acceptance))
}

/// Sampler entry points named after the model.
pub fn sample_logistic_subset(task: &SubsetTask) -> Result<DrawSet> {
    expect_kind(task, "logistic")?;
    sample_subset(task)
}

pub fn sample_gmm_subset(task: &SubsetTask) -> Result<DrawSet> {
    expect_kind(task, "gmm")?;
    sample_subset(task)
}

pub fn sample_dpm_density_subset(task: &SubsetTask) -> Result<DrawSet> {
    expect_kind(task, "dpm-density")?;
    sample_subset(task)
}

pub fn sample_parafac_subset(task: &SubsetTask) -> Result<DrawSet> {
    expect_kind(task, "parafac")?;
    sample_subset(task)
}

fn expect_kind(task: &SubsetTask, kind: &str) -> Result<()> {
    if task.spec.kind() == kind {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("expected a {kind} task, got {}", task.spec.kind())))
    }
}
