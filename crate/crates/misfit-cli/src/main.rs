//! Command-line front end for the `misfit` library.
//!
//! Three subcommands cover the pipeline end to end:
//!
//! - `simulate` writes a synthetic sparse-design dataset (`data.csv`) together
//!   with the generating truth (`truth.json`);
//! - `fit` runs smoothing → eigenanalysis → imputation → regression → pooling
//!   on a long-format CSV and writes `pooled.json`, `beta.csv` and
//!   `imputations.csv` (plus `beta_resampled.csv` under `--resample`);
//! - `reproduce` re-runs one of the preset replicated comparison tables and
//!   writes per-replication records, a pivoted summary and a provenance file.
//!
//! Every command is deterministic given its settings and seed; the only
//! output that varies between identical runs is the wall-clock entry in
//! `reproduce`'s provenance file. Exit codes: 0 success, 2 invalid
//! configuration, 3 unusable data, 4 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use misfit::dataset::{
    load_long_csv, make_grid, write_long_csv, Grid, OutcomeKind, SparseFunctionalDataset, Subject,
};
use misfit::experiment::{
    default_bandwidth, pivot_table, pool_completed, run_experiment, table_plan, Estimator,
    ImputedFit, TableId, DEFAULT_BASIS_DIM,
};
use misfit::fpca::eigendecompose;
use misfit::impute::{impute_dataset, write_completed_csv, CompletedScoreData, ImputationMode};
use misfit::numerics::mix_seed;
use misfit::simulate::{gen_linear, gen_logistic, LinearSimConfig, LogisticSimConfig, TruthRecord};
use misfit::smooth::estimate_params;
use misfit::{Error, Result};

#[derive(Parser)]
#[command(
    name = "misfit",
    version,
    about = "Regression of a scalar outcome on a sparsely observed functional covariate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (data.csv) and its truth record (truth.json)
    Simulate(SimulateArgs),
    /// Fit the imputation pipeline to a long-format CSV and write pooled results
    Fit(FitArgs),
    /// Re-run a preset comparison table at a configurable replication count
    Reproduce(ReproduceArgs),
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Reproduce(args) => cmd_reproduce(args),
    }
}

/// 2 = the request itself is invalid, 3 = the data cannot be used,
/// 4 = the numerics failed on valid input.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_)
        | Error::InvalidGrid(_)
        | Error::ModeUnsupported(_)
        | Error::UnsupportedSmoothness(_)
        | Error::Json(_) => 2,
        Error::MalformedRow { .. }
        | Error::InconsistentOutcome { .. }
        | Error::TimeOutOfRange { .. }
        | Error::DuplicateTime { .. }
        | Error::GridMismatch(_)
        | Error::Empty(_)
        | Error::DegenerateOutcome(_)
        | Error::InsufficientPairs { .. }
        | Error::Io(_)
        | Error::Csv(_) => 3,
        Error::SingularFit(_)
        | Error::RankDeficient { .. }
        | Error::EmptySpectrum(_)
        | Error::IllConditioned { .. }
        | Error::SingularDesign(_)
        | Error::Separation { .. }
        | Error::NotConverged { .. }
        | Error::NotPSD(_) => 4,
    }
}

/// Installs the global worker pool when `--threads` is given; otherwise rayon
/// defaults to one worker per logical core.
fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SimulateArgs {
    /// Generator settings as JSON; "model" selects "linear" or "logistic",
    /// remaining keys mirror the generator configs (N, m, M, J, w, ...)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Generator seed (overrides the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Number of leading components the generator exposes (overrides the config file)
    #[arg(long = "J", value_name = "INT")]
    ncomp: Option<usize>,
    /// Directory for data.csv and truth.json
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

/// The generator family, tagged inside the JSON config.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
enum SimConfig {
    Linear(LinearSimConfig),
    Logistic(LogisticSimConfig),
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => SimConfig::Linear(LinearSimConfig::new(200, 2, 2, 0.0, 0)),
    };
    match &mut cfg {
        SimConfig::Linear(c) => {
            if let Some(seed) = args.seed {
                c.seed = seed;
            }
            if let Some(j) = args.ncomp {
                c.ncomp = j;
            }
        }
        SimConfig::Logistic(c) => {
            if let Some(seed) = args.seed {
                c.seed = seed;
            }
            if let Some(j) = args.ncomp {
                c.ncomp = j;
            }
        }
    }

    let (data, truth) = match &cfg {
        SimConfig::Linear(c) => gen_linear(c, &mut ChaCha8Rng::seed_from_u64(c.seed))?,
        SimConfig::Logistic(c) => gen_logistic(c, &mut ChaCha8Rng::seed_from_u64(c.seed))?,
    };

    std::fs::create_dir_all(&args.out)?;
    write_long_csv(&data, args.out.join("data.csv"))?;
    std::fs::write(args.out.join("truth.json"), truth_json(&cfg, &truth)?)?;
    Ok(())
}

/// The generating parameters next to the quantities estimators are judged
/// against: the true coefficient curve on its grid and the true intercept.
fn truth_json(cfg: &SimConfig, truth: &TruthRecord) -> Result<String> {
    let (model, config) = match cfg {
        SimConfig::Linear(c) => ("linear", serde_json::to_value(c)?),
        SimConfig::Logistic(c) => ("logistic", serde_json::to_value(c)?),
    };
    let value = serde_json::json!({
        "model": model,
        "config": config,
        "alpha": truth.alpha,
        "t": truth.beta.grid().points(),
        "beta_true": truth.beta.values(),
    });
    Ok(serde_json::to_string_pretty(&value)?)
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Args)]
struct FitArgs {
    /// Long-format CSV with header subject_id,time,value,outcome
    /// (may instead be given as the config key "input")
    input: Option<PathBuf>,
    /// JSON settings; command-line flags win over file keys
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for imputation draws (and resampling)
    #[arg(long)]
    seed: Option<u64>,
    /// Imputation mode: MeC, MuC, MeU or MuU
    #[arg(long)]
    mode: Option<String>,
    /// Completed datasets per draw mode
    #[arg(long = "K", value_name = "INT")]
    k: Option<usize>,
    /// Number of principal components retained
    #[arg(long = "J", value_name = "INT")]
    ncomp: Option<usize>,
    /// Worker threads (default: all logical cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Rerun the whole fit on this many with-replacement subject resamples
    #[arg(long, value_name = "INT")]
    resample: Option<usize>,
    /// Complete-data estimator: scores or moment
    #[arg(long)]
    estimator: Option<String>,
    /// Covariance smoother bandwidth (default: pair-count rule)
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Map observation times affinely onto [0, 1] while loading
    #[arg(long)]
    rescale_time: bool,
}

/// File-side fit settings; every key is optional and flags override.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitFile {
    input: Option<PathBuf>,
    /// "continuous" or "binary"; inferred from the outcome column when absent.
    outcome: Option<OutcomeKind>,
    #[serde(rename = "M")]
    grid_size: usize,
    mode: Option<ImputationMode>,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "J")]
    ncomp: usize,
    bandwidth: Option<f64>,
    basis_dim: usize,
    seed: u64,
    estimator: Estimator,
    resample: usize,
    rescale_time: bool,
}

impl Default for FitFile {
    fn default() -> Self {
        Self {
            input: None,
            outcome: None,
            grid_size: 100,
            mode: None,
            k: 10,
            ncomp: 2,
            bandwidth: None,
            basis_dim: DEFAULT_BASIS_DIM,
            seed: 0,
            estimator: Estimator::Scores,
            resample: 0,
            rescale_time: false,
        }
    }
}

/// Fully resolved fit settings (file keys merged with flag overrides).
struct FitSettings {
    input: PathBuf,
    outcome: Option<OutcomeKind>,
    grid_size: usize,
    mode: ImputationMode,
    k: usize,
    ncomp: usize,
    bandwidth: Option<f64>,
    basis_dim: usize,
    seed: u64,
    estimator: Estimator,
    resample: usize,
    rescale_time: bool,
}

fn resolve_fit(args: &FitArgs) -> Result<FitSettings> {
    let file: FitFile = match &args.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => FitFile::default(),
    };
    let input = args.input.clone().or(file.input).ok_or_else(|| {
        Error::InvalidInput(
            "no input CSV: pass a path argument or the config key \"input\"".into(),
        )
    })?;
    let mode = match &args.mode {
        Some(text) => text.parse()?,
        None => file.mode.unwrap_or(ImputationMode::MuC),
    };
    let estimator = match &args.estimator {
        Some(text) => text.parse()?,
        None => file.estimator,
    };
    let settings = FitSettings {
        input,
        outcome: file.outcome,
        grid_size: file.grid_size,
        mode,
        k: args.k.unwrap_or(file.k),
        ncomp: args.ncomp.unwrap_or(file.ncomp),
        bandwidth: args.bandwidth.or(file.bandwidth),
        basis_dim: file.basis_dim,
        seed: args.seed.unwrap_or(file.seed),
        estimator,
        resample: args.resample.unwrap_or(file.resample),
        rescale_time: args.rescale_time || file.rescale_time,
    };
    if settings.k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    if settings.ncomp == 0 {
        return Err(Error::InvalidInput("J must be at least 1".into()));
    }
    if let Some(b) = settings.bandwidth {
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::InvalidInput(format!("bandwidth must be positive, got {b}")));
        }
    }
    Ok(settings)
}

/// Loads the input CSV, treating the outcome as binary when the file says so
/// or when every outcome value is exactly 0 or 1.
fn load_fit_data(s: &FitSettings) -> Result<SparseFunctionalDataset> {
    match s.outcome {
        Some(kind) => load_long_csv(&s.input, kind, s.rescale_time),
        None => {
            let data = load_long_csv(&s.input, OutcomeKind::Continuous, s.rescale_time)?;
            if data.outcomes().iter().all(|&y| y == 0.0 || y == 1.0) {
                SparseFunctionalDataset::new(data.subjects().to_vec(), OutcomeKind::Binary)
            } else {
                Ok(data)
            }
        }
    }
}

/// One full pass over the pipeline: moment estimation, eigenanalysis,
/// imputation, per-completion regression, pooling.
fn fit_pipeline(
    data: &SparseFunctionalDataset,
    s: &FitSettings,
    grid: &Grid,
    seed: u64,
) -> Result<(ImputedFit, Vec<CompletedScoreData>)> {
    let bandwidth = s.bandwidth.unwrap_or_else(|| default_bandwidth(data));
    let params = estimate_params(data, grid, s.basis_dim, bandwidth, s.mode.uses_outcome())?;
    let eig = eigendecompose(params.c_x(), s.ncomp)?;
    let completed = impute_dataset(data, &params, &eig, s.mode, s.k, seed)?;
    let fit = pool_completed(data.outcome_kind(), &completed, &eig, s.mode, s.estimator)?;
    Ok((fit, completed))
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let s = resolve_fit(&args)?;
    init_threads(args.threads);

    let data = load_fit_data(&s)?;
    let grid = make_grid(s.grid_size)?;
    let (fit, completed) = fit_pipeline(&data, &s, &grid, s.seed)?;

    std::fs::create_dir_all(&args.out)?;
    write_completed_csv(&data, &completed, args.out.join("imputations.csv"))?;
    fit.pooled.write_json(args.out.join("pooled.json"))?;
    fit.pooled.write_beta_csv(args.out.join("beta.csv"))?;

    if s.resample > 0 {
        let table = resample_curves(&data, &s, &grid)?;
        std::fs::write(args.out.join("beta_resampled.csv"), table)?;
    }
    Ok(())
}

/// With-replacement subject resamples, each refit from scratch; failed
/// resamples are skipped with a note on standard error. Rows are long-format
/// `resample,t,beta`.
fn resample_curves(
    data: &SparseFunctionalDataset,
    s: &FitSettings,
    grid: &Grid,
) -> Result<String> {
    let subjects = data.subjects();
    let mut out = String::from("resample,t,beta\n");
    for r in 1..=s.resample {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[s.seed, r as u64]));
        let picks: Vec<Subject> = (0..subjects.len())
            .map(|i| {
                let src = &subjects[rng.random_range(0..subjects.len())];
                Subject::new(
                    format!("b{:05}", i + 1),
                    src.times().to_vec(),
                    src.values().to_vec(),
                    src.outcome(),
                )
                .expect("a resampled subject copies an already validated one")
            })
            .collect();
        let refit = SparseFunctionalDataset::new(picks, data.outcome_kind())
            .and_then(|boot| fit_pipeline(&boot, s, grid, mix_seed(&[s.seed, r as u64, 1])));
        match refit {
            Ok((fit, _)) => {
                for (t, b) in grid.points().iter().zip(fit.pooled.beta_bar().values()) {
                    let _ = writeln!(out, "{r},{t},{b}");
                }
            }
            Err(e) => eprintln!("note: resample {r} skipped: {e}"),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// reproduce
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ReproduceArgs {
    /// Which table to re-run: trueJ, trueN, truem, estJ, estN, estm, reject,
    /// logisticJ, logisticN, logisticm or mvt
    table: String,
    /// Replications per cell (default: the table's preset count)
    #[arg(long)]
    replications: Option<usize>,
    /// Master seed for the replication streams
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Completed datasets per draw mode
    #[arg(long = "K", value_name = "INT")]
    k: Option<usize>,
    /// Worker threads (default: all logical cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

fn cmd_reproduce(args: ReproduceArgs) -> Result<()> {
    let table: TableId = args.table.parse()?;
    init_threads(args.threads);

    let replications = args.replications.unwrap_or_else(|| table.default_replications());
    let mut plan = table_plan(table, replications, args.seed);
    if let Some(k) = args.k {
        plan.k = k;
    }

    let started = std::time::Instant::now();
    let result = run_experiment(&plan)?;
    let runtime_seconds = started.elapsed().as_secs_f64();

    std::fs::create_dir_all(&args.out)?;
    result.write_records_csv(args.out.join("records.csv"))?;
    std::fs::write(args.out.join("summary.csv"), pivot_table(table, &plan, &result))?;
    write_provenance(&args.out, table, &plan, runtime_seconds)?;
    Ok(())
}

fn write_provenance(
    out: &Path,
    table: TableId,
    plan: &misfit::experiment::ExperimentPlan,
    runtime_seconds: f64,
) -> Result<()> {
    let provenance = serde_json::json!({
        "table": table.label(),
        "seed": plan.seed,
        "replications": plan.replications,
        "K": plan.k,
        "M": plan.grid_size,
        "modes": plan.modes.iter().map(|m| m.label()).collect::<Vec<_>>(),
        "runtime_seconds": runtime_seconds,
    });
    std::fs::write(out.join("provenance.json"), serde_json::to_string_pretty(&provenance)?)?;
    Ok(())
}
