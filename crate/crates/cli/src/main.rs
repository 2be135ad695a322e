//! `wasp` command-line tool.
//!
//! Exit codes: 0 on success, 2 for invalid input, 3 for numerical failure.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Axis};
use serde::Deserialize;

use wasp::barycenter::{wasp_timed, LpBarycenterOptions, SolverChoice, WaspOptions};
use wasp::diagnostics::{accuracy, contraction_report, ContractionConfig};
use wasp::functionals::{pushforward, Functional};
use wasp::measures::EmpiricalMeasure;
use wasp::models::{read_matrix_csv, ChainSettings, DrawSet, LogisticPrior, ModelSpec, SubsetTask};
use wasp::orchestrator::{partition, run_experiment, run_subsets, ExperimentConfig, GammaRule, PartitionPlan, PartitionStrategy};
use wasp::rng::seed_path;

#[derive(Parser)]
#[command(name = "wasp", version, about = "Divide-and-conquer posterior sampling combined through Wasserstein barycenters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Random,
    StratifiedCluster,
    Grouped,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Auto,
    Exact,
    Entropic,
}

impl From<SolverArg> for SolverChoice {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Auto => SolverChoice::Auto,
            SolverArg::Exact => SolverChoice::Exact,
            SolverArg::Entropic => SolverChoice::Entropic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split the rows of a data CSV into subsets; writes a plan JSON.
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value = "random")]
        strategy: StrategyArg,
        /// Cluster count for the stratified strategy.
        #[arg(long, default_value_t = 2)]
        clusters: usize,
        /// 0-based key column for the grouped strategy.
        #[arg(long)]
        group_column: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample every subset posterior of a plan; writes subset_<j>.csv and manifests.
    Sample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// JSON with `model`, and optionally `chain` and `gamma`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Combine subset draw CSVs into a barycenter measure CSV.
    Combine {
        #[arg(required = true)]
        draws: Vec<PathBuf>,
        /// Functional in registry syntax, e.g. `correlation:1` or `select:theta1`.
        #[arg(long)]
        functional: Option<String>,
        #[arg(long, value_enum, default_value = "auto")]
        solver: SolverArg,
        /// Grid atoms per dimension.
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        mesh: Option<f64>,
        /// Keep this many evenly spaced draws per subset.
        #[arg(long)]
        draws_per_subset: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Solve report destination; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Total-variation accuracy between two draw or measure CSVs, as JSON.
    Accuracy {
        estimate: PathBuf,
        reference: PathBuf,
        /// Columns to compare (one or two) when an input is a draw CSV.
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
    },
    /// Run a full experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Distance of the combined logistic posterior to the truth across subset sizes; CSV table.
    Contraction {
        /// True coefficients, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "250,500,1000")]
        m: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        replications: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
        #[arg(long, default_value_t = 200)]
        draws_per_subset: usize,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
struct SampleConfig {
    model: ModelSpec,
    #[serde(default)]
    chain: ChainSettings,
    #[serde(default)]
    gamma: GammaRule,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(wasp::Error::from)?)
}

fn read_data(path: &Path) -> anyhow::Result<Array2<f64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_matrix_csv(file)?.1)
}

/// A measure CSV (`w,x1,...`) as is, or a draw CSV as a uniform measure on
/// the chosen columns.
fn load_measure(path: &Path, columns: Option<&[String]>) -> anyhow::Result<EmpiricalMeasure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.starts_with("w,") {
        return Ok(EmpiricalMeasure::read_csv(text.as_bytes())?);
    }
    let (names, values) = read_matrix_csv(text.as_bytes())?;
    let picked: Vec<usize> = match columns {
        Some(cols) => cols
            .iter()
            .map(|c| names.iter().position(|n| n == c).with_context(|| format!("{} has no column '{c}'", path.display())))
            .collect::<anyhow::Result<_>>()?,
        None => (0..names.len()).collect(),
    };
    Ok(EmpiricalMeasure::uniform(values.select(Axis(1), &picked))?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Partition { data, k, strategy, clusters, group_column, seed, out } => {
            let data = read_data(&data)?;
            let strategy = match strategy {
                StrategyArg::Random => PartitionStrategy::Random,
                StrategyArg::StratifiedCluster => PartitionStrategy::StratifiedCluster { clusters },
                StrategyArg::Grouped => match group_column {
                    Some(column) => PartitionStrategy::Grouped { column },
                    None => bail!(wasp::Error::InvalidInput("grouped partitions need --group-column".into())),
                },
            };
            let plan = partition(data.view(), k, &strategy, seed)?;
            std::fs::write(&out, serde_json::to_string(&plan)? + "\n")?;
            eprintln!("subset sizes: {:?}", plan.sizes());
        }
        Command::Sample { data, plan, config, seed, out, workers } => {
            let data = read_data(&data)?;
            let plan: PartitionPlan = read_json(&plan)?;
            plan.validate(data.nrows())?;
            let cfg: SampleConfig = read_json(&config)?;
            let n = data.nrows();
            let tasks: Vec<SubsetTask> = plan
                .shards(data.view())
                .into_iter()
                .enumerate()
                .map(|(j, shard)| {
                    let mut t = SubsetTask::with_auto_gamma(cfg.model.clone(), shard, cfg.chain, seed_path(seed, &[j as u64]), j, plan.k, n);
                    if let GammaRule::Fixed(g) = cfg.gamma {
                        t.gamma = g;
                    }
                    t
                })
                .collect();
            let draws = run_subsets(&tasks, workers.unwrap_or(plan.k))?;
            for (j, d) in draws.iter().enumerate() {
                d.save(&out, &format!("subset_{j}"))?;
            }
            eprintln!("wrote {} draw sets to {}", draws.len(), out.display());
        }
        Command::Combine { draws, functional, solver, bins, mesh, draws_per_subset, out, report } => {
            let functional: Option<Functional> = functional.map(|f| f.parse()).transpose()?;
            let mut sets = Vec::with_capacity(draws.len());
            for path in &draws {
                let mut d = DrawSet::load(path)?;
                if let Some(s) = draws_per_subset.filter(|&s| s > 0 && s < d.len()) {
                    d = d.thinned(d.len().div_ceil(s));
                }
                if let Some(f) = &functional {
                    d = pushforward(&d, f)?;
                }
                sets.push(d.into_draws());
            }
            let dim = sets[0].ncols();
            let opts = WaspOptions {
                mesh,
                counts: bins.map(|b| vec![b; dim]),
                solver: solver.into(),
                lp: LpBarycenterOptions::default(),
                ..WaspOptions::default()
            };
            let views: Vec<_> = sets.iter().map(|s| s.view()).collect();
            let (est, secs) = wasp_timed(&views, &opts)?;
            est.measure.save_csv(&out)?;
            let json = serde_json::to_string_pretty(&est.report(secs))? + "\n";
            match report {
                Some(path) => std::fs::write(path, json)?,
                None => print!("{json}"),
            }
        }
        Command::Accuracy { estimate, reference, columns } => {
            let a = load_measure(&estimate, columns.as_deref())?;
            let b = load_measure(&reference, columns.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&accuracy(&a, &b)?)?);
        }
        Command::Experiment { config, seed, out } => {
            let mut cfg: ExperimentConfig = read_json(&config)?;
            cfg.seed = seed;
            cfg.validate()?;
            let (report, timing) = run_experiment(&cfg, Some(&out))?;
            report.write_csv(std::io::stdout())?;
            eprintln!("total {:.1} s, combine share {:.1}%", timing.total, 100.0 * timing.combine_fraction());
        }
        Command::Contraction { theta, m, k, replications, seed, iterations, draws_per_subset, bins, out } => {
            let cfg = ContractionConfig {
                m_grid: m,
                k,
                replications,
                seed,
                chain: ChainSettings { iterations, burn_in: iterations / 2, thin: 5 },
                prior: LogisticPrior::default(),
                draws_per_subset: Some(draws_per_subset),
                wasp: WaspOptions { counts: Some(vec![bins; theta.len()]), ..WaspOptions::default() },
                theta0: theta,
            };
            let report = contraction_report(&cfg)?;
            match out {
                Some(path) => report.write_csv(File::create(path)?)?,
                None => report.write_csv(std::io::stdout())?,
            }
            eprintln!("non-increasing: {}, last/first: {:.3}", report.monotone, report.ratio_last_first);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<wasp::Error>().map_or(2, wasp::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
