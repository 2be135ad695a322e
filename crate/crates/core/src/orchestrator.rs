//! Partitioning, parallel subset sampling and end-to-end experiments.
//!
//! Seeds flow down a fixed path so any piece can be rerun on its own: a
//! replication `r` uses `seed_path(master, [r])`, and below it index 0 seeds
//! data generation, 1 the partition, `[2, j]` the chain of subset `j` and 3
//! the full-data reference chain.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::barycenter::{wasp_from_samples, LpBarycenterOptions, SolveReport, SolverChoice, WaspOptions};
use crate::cluster::kmeans;
use crate::diagnostics::{accuracy, w2_to_truth};
use crate::error::{Error, Result};
use crate::functionals::{pushforward, Functional};
use crate::measures::EmpiricalMeasure;
use crate::models::{dpm, gmm, logistic, parafac, sample_subset, ChainSettings, DrawSet, ModelSpec, Provenance, SubsetTask};
use crate::rng::{rng_from_seed, seed_path, RNG_FAMILY};

/// How rows are split into subsets.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum PartitionStrategy {
    /// Uniformly random, sizes differing by at most one.
    #[default]
    Random,
    /// k-means on the rows, then each cluster dealt evenly across subsets.
    StratifiedCluster { clusters: usize },
    /// Rows sharing a value in `column` (0-based) stay together.
    Grouped { column: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub strategy: PartitionStrategy,
    pub k: usize,
    pub seed: u64,
    /// Subset id of every row.
    pub assignment: Vec<usize>,
}

impl PartitionPlan {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &j in &self.assignment {
            sizes[j] += 1;
        }
        sizes
    }

    /// Row indices of each subset, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &j) in self.assignment.iter().enumerate() {
            out[j].push(i);
        }
        out
    }

    pub fn shards(&self, data: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        self.members().iter().map(|rows| data.select(Axis(0), rows)).collect()
    }

    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.assignment.len() != rows {
            return Err(Error::DimensionMismatch { expected: rows, found: self.assignment.len() });
        }
        if let Some(&bad) = self.assignment.iter().find(|&&j| j >= self.k) {
            return Err(Error::InvalidInput(format!("row assigned to subset {bad}, but k = {}", self.k)));
        }
        if self.sizes().contains(&0) {
            return Err(Error::InvalidInput("partition leaves a subset empty".into()));
        }
        Ok(())
    }
}

/// Splits the rows of `data` into `k` subsets.
pub fn partition(data: ArrayView2<'_, f64>, k: usize, strategy: &PartitionStrategy, seed: u64) -> Result<PartitionPlan> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("cannot split {n} rows into {k} subsets")));
    }
    let mut rng = rng_from_seed(seed);
    let mut assignment = vec![0; n];
    match strategy {
        PartitionStrategy::Random => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for (pos, &i) in order.iter().enumerate() {
                assignment[i] = pos % k;
            }
        }
        PartitionStrategy::StratifiedCluster { clusters } => {
            let labels = kmeans(data, *clusters, 25, &mut rng)?.labels;
            let mut groups = vec![Vec::new(); *clusters];
            for (i, &c) in labels.iter().enumerate() {
                groups[c].push(i);
            }
            // one running counter so overall sizes also stay within one
            let mut next = 0;
            for mut g in groups {
                g.shuffle(&mut rng);
                for i in g {
                    assignment[i] = next % k;
                    next += 1;
                }
            }
        }
        PartitionStrategy::Grouped { column } => {
            if *column >= data.ncols() {
                return Err(Error::InvalidInput(format!("group key column {column} missing; data has {} columns", data.ncols())));
            }
            let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (i, &key) in data.column(*column).iter().enumerate() {
                let key = if key == 0.0 { 0.0 } else { key };
                groups.entry(key.to_bits()).or_default().push(i);
            }
            if k > groups.len() {
                return Err(Error::InvalidInput(format!("cannot split {} groups into {k} subsets", groups.len())));
            }
            let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
            groups.shuffle(&mut rng);
            groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
            let mut load = vec![0usize; k];
            for g in groups {
                let j = (0..k).min_by_key(|&j| (load[j], j)).expect("k > 0");
                load[j] += g.len();
                for i in g {
                    assignment[i] = j;
                }
            }
        }
    }
    let plan = PartitionPlan { strategy: strategy.clone(), k, seed, assignment };
    plan.validate(n)?;
    Ok(plan)
}

/// Samples every task on a pool of at most `workers` threads. Results come
/// back in task order; each chain owns its seed, so the pool size never
/// changes the draws.
pub fn run_subsets(tasks: &[SubsetTask], workers: usize) -> Result<Vec<DrawSet>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<DrawSet>> = pool.install(|| tasks.par_iter().map(sample_subset).collect());
    if results.iter().all(Result::is_ok) {
        return Ok(results.into_iter().map(|r| r.expect("checked")).collect());
    }
    let mut report = String::new();
    let mut numerical = false;
    let mut failed = 0;
    for (task, r) in tasks.iter().zip(&results) {
        match r {
            Ok(_) => writeln!(report, "  subset {}: ok", task.subset_id).expect("string write"),
            Err(e) => {
                failed += 1;
                numerical |= e.exit_code() == 3;
                writeln!(report, "  subset {}: failed: {e}", task.subset_id).expect("string write");
            }
        }
    }
    Err(Error::SubsetFailures { failed, total: tasks.len(), report, numerical })
}

/// Where experiment data comes from. Synthetic generators carry the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    /// Numeric CSV with a header row; the same data every replication.
    File { path: PathBuf },
    Logistic { n: usize, theta: Vec<f64> },
    Gmm { n: usize, weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<Vec<f64>>> },
    DpmDensity { n: usize, weights: Vec<f64>, means: Vec<f64>, sds: Vec<f64> },
    Parafac { n: usize, weights: Vec<f64>, profiles: Vec<parafac::Profile> },
}

impl DataSource {
    pub fn generate(&self, seed: u64) -> Result<Array2<f64>> {
        let mut rng = rng_from_seed(seed);
        Ok(match self {
            DataSource::File { path } => crate::models::read_matrix_csv(std::fs::File::open(path)?)?.1,
            DataSource::Logistic { n, theta } => logistic::simulate(&mut rng, *n, theta),
            DataSource::Gmm { n, weights, means, covariances } => {
                let covs = covariances
                    .iter()
                    .map(|c| {
                        let p = c.len();
                        if c.iter().any(|r| r.len() != p) {
                            return Err(Error::InvalidInput("covariances must be square".into()));
                        }
                        Ok(nalgebra::DMatrix::from_fn(p, p, |a, b| c[a][b]))
                    })
                    .collect::<Result<Vec<_>>>()?;
                gmm::simulate(&mut rng, *n, weights, means, &covs)?
            }
            DataSource::DpmDensity { n, weights, means, sds } => dpm::simulate(&mut rng, *n, weights, means, sds),
            DataSource::Parafac { n, weights, profiles } => parafac::simulate(&mut rng, *n, weights, profiles),
        })
    }

    /// True parameter values keyed by parameter name; components beyond the
    /// generating ones get zero weight.
    fn truth_by_name(&self, spec: &ModelSpec) -> Option<BTreeMap<String, f64>> {
        let mut t = BTreeMap::new();
        match (self, spec) {
            (DataSource::Logistic { theta, .. }, ModelSpec::Logistic(_)) => {
                for (name, v) in logistic::parameter_names(theta.len()).into_iter().zip(theta) {
                    t.insert(name, *v);
                }
            }
            (DataSource::Gmm { weights, means, covariances, .. }, ModelSpec::Gmm(prior)) => {
                if weights.len() != prior.components {
                    return None;
                }
                for (h, ((w, m), c)) in weights.iter().zip(means).zip(covariances).enumerate() {
                    let h = h + 1;
                    t.insert(format!("pi{h}"), *w);
                    for (a, v) in m.iter().enumerate() {
                        t.insert(format!("mu{h}_{}", a + 1), *v);
                    }
                    for a in 0..c.len() {
                        for b in a..c.len() {
                            t.insert(format!("sigma{h}_{}_{}", a + 1, b + 1), c[a][b]);
                        }
                    }
                }
            }
            (DataSource::DpmDensity { weights, means, sds, .. }, ModelSpec::DpmDensity(prior)) => {
                if weights.len() > prior.truncation {
                    return None;
                }
                for h in 0..prior.truncation {
                    let n = h + 1;
                    t.insert(format!("nu{n}"), weights.get(h).copied().unwrap_or(0.0));
                    t.insert(format!("mu{n}"), means.get(h).copied().unwrap_or(0.0));
                    t.insert(format!("sigma2_{n}"), sds.get(h).map_or(1.0, |s| s * s));
                }
                t.insert("alpha".into(), 1.0);
            }
            (DataSource::Parafac { weights, profiles, .. }, ModelSpec::Parafac(prior)) => {
                if weights.len() > prior.truncation || profiles.iter().any(|p| p.len() != prior.categories.len()) {
                    return None;
                }
                for h in 0..prior.truncation {
                    let n = h + 1;
                    t.insert(format!("nu{n}"), weights.get(h).copied().unwrap_or(0.0));
                    for (q, &d) in prior.categories.iter().enumerate() {
                        for c in 0..d {
                            let v = profiles.get(h).and_then(|p| p[q].get(c).copied()).unwrap_or(1.0 / d as f64);
                            t.insert(format!("psi{n}_{}_{}", q + 1, c + 1), v);
                        }
                    }
                }
                t.insert("alpha".into(), 1.0);
            }
            _ => return None,
        }
        Some(t)
    }

    /// The true parameter as a one-row draw set in the model's layout.
    pub fn truth(&self, spec: &ModelSpec, data_cols: usize) -> Option<DrawSet> {
        let by_name = self.truth_by_name(spec)?;
        let names = spec.parameter_names(data_cols);
        let values: Vec<f64> = names.iter().map(|n| by_name.get(n).copied()).collect::<Option<_>>()?;
        let row = Array2::from_shape_vec((1, values.len()), values).ok()?;
        DrawSet::new(row, names, truth_provenance(spec)).ok()
    }
}

fn truth_provenance(spec: &ModelSpec) -> Provenance {
    Provenance {
        model: spec.kind().to_string(),
        subset_id: 0,
        gamma: 1.0,
        seed: 0,
        iterations: 1,
        burn_in: 0,
        thin: 1,
        m: 0,
        k: 1,
        acceptance_rate: None,
        functional: Some("truth".into()),
        rng: RNG_FAMILY.to_string(),
    }
}

/// Tempering power of each subset.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaRule {
    /// `n / m_j` for subset `j`.
    #[default]
    Auto,
    Fixed(f64),
}

/// Combine-step settings as they appear in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CombineSettings {
    pub solver: SolverChoice,
    /// Grid atoms per dimension; `None` uses the default mesh.
    pub bins: Option<usize>,
    /// Keep this many evenly spaced draws per subset before combining.
    pub draws_per_subset: Option<usize>,
    /// Upper limit on `grid atoms × total draws` for the exact solver.
    pub lp_cap: usize,
}

impl Default for CombineSettings {
    fn default() -> Self {
        Self { solver: SolverChoice::Auto, bins: None, draws_per_subset: None, lp_cap: crate::barycenter::BARYCENTER_LP_CAP }
    }
}

impl CombineSettings {
    pub fn wasp_options(&self, dim: usize) -> WaspOptions {
        WaspOptions {
            counts: self.bins.map(|b| vec![b; dim]),
            solver: self.solver,
            lp: LpBarycenterOptions { cap: self.lp_cap, ..LpBarycenterOptions::default() },
            ..WaspOptions::default()
        }
    }
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelSpec,
    pub data: DataSource,
    pub k: usize,
    #[serde(default)]
    pub gamma: GammaRule,
    #[serde(default)]
    pub partition: PartitionStrategy,
    #[serde(default)]
    pub chain: ChainSettings,
    /// Functionals in registry syntax, e.g. `correlation:1`.
    pub functionals: Vec<String>,
    #[serde(default)]
    pub combine: CombineSettings,
    #[serde(default = "one")]
    pub replications: usize,
    pub seed: u64,
    /// Also run the full-data chain (`k = 1`, `γ = 1`) for accuracy.
    #[serde(default = "yes")]
    pub reference: bool,
    /// Worker threads for subset chains; defaults to `k`.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parsed_functionals(&self) -> Result<Vec<Functional>> {
        self.functionals.iter().map(|s| s.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.chain.validate()?;
        if self.k == 0 || self.replications == 0 {
            return Err(Error::InvalidInput("k and the replication count must be at least 1".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::InvalidInput(format!("experiment name '{}' is not a plain directory name", self.name)));
        }
        if let GammaRule::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidInput(format!("fixed tempering power must be positive, got {g}")));
            }
        }
        if self.functionals.is_empty() {
            return Err(Error::InvalidInput("at least one functional is required".into()));
        }
        self.parsed_functionals()?;
        match &self.data {
            DataSource::File { .. } => {}
            synthetic => {
                let width = match synthetic {
                    DataSource::Logistic { theta, .. } => theta.len() + 1,
                    DataSource::Gmm { means, .. } => means.first().map_or(0, Vec::len),
                    DataSource::Parafac { profiles, .. } => profiles.first().map_or(0, Vec::len),
                    _ => 1,
                };
                if synthetic.truth(&self.model, width).is_none() {
                    return Err(Error::InvalidInput(format!(
                        "synthetic data source does not carry a full truth for the {} model",
                        self.model.kind()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-quantity outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityResult {
    pub quantity: String,
    pub wasp_mean: f64,
    pub wasp_sd: f64,
    pub accuracy: Option<f64>,
    pub reference_mean: Option<f64>,
    pub reference_sd: Option<f64>,
    pub truth: Option<f64>,
    pub w2_to_truth: Option<f64>,
    pub support_size: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub seed: u64,
    pub subset_sizes: Vec<usize>,
    pub quantities: Vec<QuantityResult>,
}

/// Summary over replications; s.d. is zero with a single replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub quantity: String,
    pub replications: usize,
    pub accuracy_mean: Option<f64>,
    pub accuracy_sd: Option<f64>,
    pub accuracy_min: Option<f64>,
    pub w2_truth_mean: Option<f64>,
    pub w2_truth_sd: Option<f64>,
    pub wasp_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub model: String,
    pub k: usize,
    pub rng: String,
    pub seed: u64,
    pub replications: Vec<ReplicationResult>,
    pub table: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "quantity",
            "replications",
            "accuracy_mean",
            "accuracy_sd",
            "accuracy_min",
            "w2_truth_mean",
            "w2_truth_sd",
            "wasp_mean",
        ])?;
        for r in &self.table {
            wtr.write_record([
                r.quantity.clone(),
                r.replications.to_string(),
                opt(r.accuracy_mean),
                opt(r.accuracy_sd),
                opt(r.accuracy_min),
                opt(r.w2_truth_mean),
                opt(r.w2_truth_sd),
                format!("{:.6}", r.wasp_mean),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Accuracy of `quantity` in every replication, in order.
    pub fn accuracies(&self, quantity: &str) -> Vec<f64> {
        self.replications
            .iter()
            .filter_map(|r| r.quantities.iter().find(|q| q.quantity == quantity).and_then(|q| q.accuracy))
            .collect()
    }
}

/// Wall-clock seconds per stage, kept apart from the deterministic report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub data: f64,
    pub sampling: f64,
    pub reference: f64,
    pub combine: f64,
    pub diagnostics: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTiming {
    pub replications: Vec<StageTiming>,
    pub total: f64,
}

impl ExperimentTiming {
    /// Share of pipeline time spent in the combine step.
    pub fn combine_fraction(&self) -> f64 {
        let combine: f64 = self.replications.iter().map(|t| t.combine).sum();
        let total: f64 = self.replications.iter().map(|t| t.total).sum();
        if total > 0.0 { combine / total } else { 0.0 }
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

fn prepare(spec: &ModelSpec, draws: DrawSet) -> Result<DrawSet> {
    match spec {
        ModelSpec::Gmm(p) => gmm::relabel_by_first_mean(&draws, p.components),
        _ => Ok(draws),
    }
}

fn thin_to(draws: &DrawSet, keep: Option<usize>) -> DrawSet {
    match keep {
        Some(s) if s > 0 && s < draws.len() => draws.thinned(draws.len().div_ceil(s)),
        _ => draws.clone(),
    }
}

/// Runs one replication, writing its artifacts under `dir` when given.
fn run_replication(cfg: &ExperimentConfig, functionals: &[Functional], rep: usize, dir: Option<&Path>) -> Result<(ReplicationResult, StageTiming)> {
    let start = Instant::now();
    let mut timing = StageTiming::default();
    let seed = seed_path(cfg.seed, &[rep as u64]);
    let data = cfg.data.generate(seed_path(seed, &[0]))?;
    let n = data.nrows();
    let plan = partition(data.view(), cfg.k, &cfg.partition, seed_path(seed, &[1]))?;
    timing.data = start.elapsed().as_secs_f64();

    let tasks: Vec<SubsetTask> = plan
        .shards(data.view())
        .into_iter()
        .enumerate()
        .map(|(j, shard)| {
            let chain_seed = seed_path(seed, &[2, j as u64]);
            let mut task = SubsetTask::with_auto_gamma(cfg.model.clone(), shard, cfg.chain, chain_seed, j, cfg.k, n);
            if let GammaRule::Fixed(g) = cfg.gamma {
                task.gamma = g;
            }
            task
        })
        .collect();
    let t = Instant::now();
    let subsets = run_subsets(&tasks, cfg.workers.unwrap_or(cfg.k))?;
    timing.sampling = t.elapsed().as_secs_f64();
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("partition.json"), serde_json::to_string(&plan)? + "\n")?;
        for (j, d) in subsets.iter().enumerate() {
            d.save(dir, &format!("subset_{j}"))?;
        }
    }

    let reference = if cfg.reference {
        let t = Instant::now();
        let task = SubsetTask { gamma: 1.0, ..SubsetTask::with_auto_gamma(cfg.model.clone(), data.clone(), cfg.chain, seed_path(seed, &[3]), 0, 1, n) };
        let r = sample_subset(&task)?;
        timing.reference = t.elapsed().as_secs_f64();
        if let Some(dir) = dir {
            r.save(dir, "reference")?;
        }
        Some(prepare(&cfg.model, r)?)
    } else {
        None
    };
    let subsets: Vec<DrawSet> = subsets.into_iter().map(|d| prepare(&cfg.model, d)).collect::<Result<_>>()?;
    let truth = match cfg.data.truth(&cfg.model, data.ncols()) {
        Some(t) => Some(prepare(&cfg.model, t)?),
        None => None,
    };

    let mut quantities = Vec::new();
    for f in functionals {
        let pushed: Vec<DrawSet> = subsets.iter().map(|d| pushforward(&thin_to(d, cfg.combine.draws_per_subset), f)).collect::<Result<_>>()?;
        let ref_pushed = reference.as_ref().map(|r| pushforward(r, f)).transpose()?;
        let truth_pushed = truth.as_ref().map(|t| pushforward(t, f)).transpose()?;
        for (c, name) in pushed[0].names().iter().enumerate() {
            let columns: Vec<Array2<f64>> = pushed.iter().map(|d| d.draws().slice(ndarray::s![.., c..c + 1]).to_owned()).collect();
            let views: Vec<_> = columns.iter().map(|a| a.view()).collect();
            let t = Instant::now();
            let est = wasp_from_samples(&views, &cfg.combine.wasp_options(1))?;
            timing.combine += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let atoms = est.measure.atoms().column(0).to_owned();
            let weights = est.measure.weights();
            let wasp_mean = atoms.dot(&weights);
            let wasp_sd = atoms.iter().zip(weights).map(|(x, w)| w * (x - wasp_mean) * (x - wasp_mean)).sum::<f64>().sqrt();
            let (acc, ref_mean, ref_sd) = match &ref_pushed {
                Some(r) => {
                    let col: Array1<f64> = r.draws().column(c).to_owned();
                    let ref_measure = EmpiricalMeasure::uniform(col.clone().insert_axis(Axis(1)))?;
                    (Some(accuracy(&est.measure, &ref_measure)?.accuracy), col.mean(), Some(col.std(0.0)))
                }
                None => (None, None, None),
            };
            let truth_value = truth_pushed.as_ref().map(|t| t.draws()[[0, c]]);
            let w2 = truth_value.map(|v| w2_to_truth(&est.measure, &[v])).transpose()?;
            timing.diagnostics += t.elapsed().as_secs_f64();
            quantities.push(QuantityResult {
                quantity: name.clone(),
                wasp_mean,
                wasp_sd,
                accuracy: acc,
                reference_mean: ref_mean,
                reference_sd: ref_sd,
                truth: truth_value,
                w2_to_truth: w2,
                support_size: est.solution.support_size(),
                objective: est.solution.objective,
            });
            if let Some(dir) = dir {
                let stem = sanitize(name);
                est.measure.write_csv(std::fs::File::create(dir.join(format!("wasp_{stem}.csv")))?)?;
                let report: SolveReport = est.report(0.0);
                std::fs::write(dir.join(format!("wasp_{stem}.json")), serde_json::to_string_pretty(&report)? + "\n")?;
            }
        }
    }
    let result = ReplicationResult { replication: rep, seed, subset_sizes: plan.sizes(), quantities };
    if let Some(dir) = dir {
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&result)? + "\n")?;
    }
    timing.total = start.elapsed().as_secs_f64();
    Ok((result, timing))
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

fn summarize(replications: &[ReplicationResult]) -> Vec<ReportRow> {
    let Some(first) = replications.first() else { return Vec::new() };
    first
        .quantities
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            let pick = |f: fn(&QuantityResult) -> Option<f64>| -> Option<Vec<f64>> { replications.iter().map(|r| f(&r.quantities[qi])).collect() };
            let acc = pick(|q| q.accuracy);
            let w2 = pick(|q| q.w2_to_truth);
            let means: Vec<f64> = replications.iter().map(|r| r.quantities[qi].wasp_mean).collect();
            ReportRow {
                quantity: q.quantity.clone(),
                replications: replications.len(),
                accuracy_mean: acc.as_ref().map(|a| mean_sd(a).0),
                accuracy_sd: acc.as_ref().map(|a| mean_sd(a).1),
                accuracy_min: acc.as_ref().map(|a| a.iter().copied().fold(f64::INFINITY, f64::min)),
                w2_truth_mean: w2.as_ref().map(|a| mean_sd(a).0),
                w2_truth_sd: w2.as_ref().map(|a| mean_sd(a).1),
                wasp_mean: mean_sd(&means).0,
            }
        })
        .collect()
}

/// Runs every replication of an experiment. With `out` set, artifacts land
/// in `out/<name>/<rep>/` and the tables in `out/<name>/report.{csv,json}`,
/// with wall times in `timing.json`.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(ExperimentReport, ExperimentTiming)> {
    cfg.validate()?;
    let functionals = cfg.parsed_functionals()?;
    let start = Instant::now();
    let root = out.map(|o| o.join(&cfg.name));
    if let Some(root) = &root {
        std::fs::create_dir_all(root)?;
        std::fs::write(root.join("config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    }
    let mut replications = Vec::with_capacity(cfg.replications);
    let mut timing = ExperimentTiming::default();
    for rep in 0..cfg.replications {
        let dir = root.as_ref().map(|r| r.join(rep.to_string()));
        let (result, t) = run_replication(cfg, &functionals, rep, dir.as_deref())?;
        log::info!("{} replication {rep} done in {:.1} s", cfg.name, t.total);
        replications.push(result);
        timing.replications.push(t);
    }
    timing.total = start.elapsed().as_secs_f64();
    let report = ExperimentReport {
        name: cfg.name.clone(),
        model: cfg.model.kind().to_string(),
        k: cfg.k,
        rng: RNG_FAMILY.to_string(),
        seed: cfg.seed,
        table: summarize(&replications),
        replications,
    };
    if let Some(root) = &root {
        report.write_csv(std::fs::File::create(root.join("report.csv"))?)?;
        std::fs::write(root.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        std::fs::write(root.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    }
    Ok((report, timing))
}
