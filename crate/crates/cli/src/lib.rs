//! Command-line front end: parses flags, runs a pipeline, writes CSV or JSON.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use poisonlab::aggregators::{AggregatorConfig, AggregatorKind};
use poisonlab::attacks::{AttackKind, PoisonStyle, DEFAULT_LAMBDA};
use poisonlab::data::TaskKind;
use poisonlab::dataio::{write_csv, CsvRow, ImageSet};
use poisonlab::experiments::{
    run_attack_check, run_mnist_experiment, run_synthetic_sweep, AttackCheckPlan, ImageDataset, MnistPlan,
    SyntheticPlan,
};
use poisonlab::rng::SeededRng;
use poisonlab::theory::{
    concentration_check, eval_series_bounds, estimate_expected_unit_gradient_norm, kappa_for,
    manipulability_failure_rate, random_model, subspace_bound_check, tail_bound_spotchecks, BoundCheckReport,
};
use poisonlab::data::TaskSpec;
use poisonlab::training::TrainConfig;
use poisonlab::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFY_FAILED: i32 = 3;

pub const BASE_SEED_VAR: &str = "POISONLAB_BASE_SEED";
pub const DEFAULT_BASE_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "poisonlab", about = "Poisoning attacks against robust gradient aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dimension-reduction sweep on synthetic regression data.
    Synthetic(SyntheticArgs),
    /// Random-feature softmax classifier on IDX image files.
    Mnist(MnistArgs),
    /// Numeric checks of the concentration and series bounds.
    Verify(VerifyArgs),
    /// Stationary-point attack against geomed or clipped mean.
    AttackCheck(AttackCheckArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Output file; CSV unless it ends in `.json` (attack-check always writes JSON).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SyntheticArgs {
    #[arg(long, default_value = "linear")]
    task: TaskKind,
    #[arg(long, default_value = "cwtm")]
    agg: AggregatorKind,
    #[arg(long)]
    delta: Option<f64>,
    /// Fixed trim count; P per tail when omitted.
    #[arg(long)]
    trim: Option<usize>,
    #[arg(long, default_value = "antimodel")]
    attack: AttackKind,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long = "H", default_value_t = 500)]
    honest: usize,
    /// Generation dimension; 500 for linear, 200 for logistic.
    #[arg(long = "D")]
    dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', default_value = "0,5,25")]
    poisons: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    omega: f64,
    /// Number of seeds, counted up from the base seed.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct MnistArgs {
    #[arg(long)]
    mnist_images: PathBuf,
    #[arg(long)]
    mnist_labels: PathBuf,
    #[arg(long)]
    val_images: PathBuf,
    #[arg(long)]
    val_labels: PathBuf,
    #[arg(long, default_value = "mnist")]
    dataset: ImageDataset,
    #[arg(long, value_delimiter = ',', default_value = "100,500,2000")]
    d: Vec<usize>,
    /// Poison budgets; 60 gives one poison per batch of 1000 out of 60000.
    #[arg(long, value_delimiter = ',', default_value = "0,60")]
    poisons: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    batch: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value = "cwtm")]
    agg: AggregatorKind,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    trim: Option<usize>,
    #[arg(long, default_value = "batch-ascent")]
    attack: AttackKind,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "series,mu,concentration,subspace,tails,manipulability"
    )]
    checks: Vec<Check>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Check {
    Series,
    Mu,
    Concentration,
    Subspace,
    Tails,
    Manipulability,
}

#[derive(Debug, Args)]
struct AttackCheckArgs {
    #[arg(long, default_value = "linear")]
    task: TaskKind,
    /// `geomed` or `clipmean`.
    #[arg(long, default_value = "geomed")]
    agg: AggregatorKind,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long = "H", default_value_t = 130)]
    honest: usize,
    #[arg(long = "P", default_value_t = 13)]
    poisons: usize,
    #[arg(long = "D", default_value_t = 16_900)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[command(flatten)]
    common: Common,
}

/// Base seed from `POISONLAB_BASE_SEED`, else 42.
pub fn base_seed() -> Result<u64> {
    match std::env::var(BASE_SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("{BASE_SEED_VAR}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_BASE_SEED),
    }
}

/// Runs one invocation; `argv[0]` is the program name.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            EXIT_RUNTIME
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    let threads = match &command {
        Command::Synthetic(a) => a.common.threads,
        Command::Mnist(a) => a.common.threads,
        Command::Verify(a) => a.common.threads,
        Command::AttackCheck(a) => a.common.threads,
    };
    let seed = base_seed()?;
    match threads {
        Some(0) => Err(Error::InvalidParameter("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(|| execute(command, seed)),
        None => execute(command, seed),
    }
}

fn execute(command: Command, seed: u64) -> Result<i32> {
    match command {
        Command::Synthetic(a) => synthetic(a, seed),
        Command::Mnist(a) => mnist(a, seed),
        Command::Verify(a) => verify(a, seed),
        Command::AttackCheck(a) => attack_check(a, seed),
    }
}

fn aggregator(kind: AggregatorKind, delta: Option<f64>, trim: Option<usize>) -> Result<AggregatorConfig> {
    Ok(match kind {
        AggregatorKind::Mean => AggregatorConfig::mean(),
        AggregatorKind::ClippedMean => AggregatorConfig::clipped_mean(
            delta.ok_or_else(|| Error::InvalidParameter("clipmean needs --delta".into()))?,
        ),
        AggregatorKind::GeoMed => AggregatorConfig::geomed(),
        AggregatorKind::CwMed => AggregatorConfig::cwmed(),
        AggregatorKind::CwTm => AggregatorConfig::cwtm(trim.unwrap_or(0)),
    })
}

fn synthetic(a: SyntheticArgs, seed: u64) -> Result<i32> {
    let mut plan = SyntheticPlan::desk(a.task, seed);
    if let Some(dim) = a.dim {
        plan.dim = dim;
        plan.dims = vec![10, 50, 100, dim / 2, dim].into_iter().filter(|&d| d <= dim).collect();
        plan.dims.dedup();
    }
    if let Some(dims) = a.dims {
        plan.dims = dims;
    }
    plan.honest = a.honest;
    plan.poisons = a.poisons;
    plan.omega = a.omega;
    plan.aggregator = aggregator(a.agg, a.delta, a.trim)?;
    plan.trim = a.trim;
    plan.attack = a.attack;
    plan.lambda = a.lambda;
    plan.seeds = (0..a.seeds).map(|i| seed + i).collect();
    plan.train = TrainConfig {
        max_iters: a.iters,
        ..TrainConfig::default()
    };
    let rows = run_synthetic_sweep(&plan)?;
    write_rows(&rows, &a.common.out)?;
    Ok(EXIT_OK)
}

fn mnist(a: MnistArgs, seed: u64) -> Result<i32> {
    let train_set = ImageSet::load(&a.mnist_images, &a.mnist_labels)?;
    let val_set = ImageSet::load(&a.val_images, &a.val_labels)?;
    let agg = aggregator(a.agg, a.delta, a.trim)?;
    let mut rows = Vec::new();
    for s in 0..a.seeds {
        for &d in &a.d {
            for &p in &a.poisons {
                let mut plan = MnistPlan::new(a.dataset, d, p, seed + s);
                plan.aggregator = agg.clone();
                plan.trim = a.trim;
                plan.attack = a.attack;
                plan.lambda = a.lambda;
                plan.epochs = a.epochs;
                plan.batch = a.batch;
                rows.push(run_mnist_experiment(&train_set, &val_set, &plan)?);
            }
        }
    }
    write_rows(&rows, &a.common.out)?;
    Ok(EXIT_OK)
}

/// Runs the selected bound checks with their default sizes.
pub fn verify_reports(checks: &[&str], seed: u64) -> Result<Vec<BoundCheckReport>> {
    let mut reports = Vec::new();
    let root = SeededRng::new(seed);
    for (i, &name) in checks.iter().enumerate() {
        let mut rng = root.derive(i as u64);
        match name {
            "series" => reports.extend(eval_series_bounds()),
            "mu" => {
                const DIM: usize = 1024;
                for kind in [TaskKind::Linear, TaskKind::Logistic] {
                    for _ in 0..5 {
                        let task = TaskSpec::new(kind, random_model(DIM, &mut rng), 0.0)?;
                        let alpha = random_model(DIM, &mut rng);
                        for clip in [None, Some(2.0)] {
                            reports.push(estimate_expected_unit_gradient_norm(&task, &alpha, clip, 20_000, &mut rng)?);
                        }
                    }
                }
            }
            "concentration" => {
                const DIM: usize = 2048;
                for kind in [TaskKind::Linear, TaskKind::Logistic] {
                    let task = TaskSpec::new(kind, random_model(DIM, &mut rng), 0.0)?;
                    let alpha = random_model(DIM, &mut rng);
                    let out = concentration_check(&task, &alpha, 4096, kappa_for(DIM), None, 50, 100_000, &mut rng)?;
                    reports.push(out.report);
                }
            }
            "subspace" => {
                for d in [2, 8, 64] {
                    reports.push(subspace_bound_check(2048, d, 2000, &mut rng)?);
                }
            }
            "tails" => reports.extend(tail_bound_spotchecks(100_000, &mut rng)?),
            "manipulability" => {
                for clip in [None, Some(1.0)] {
                    reports.push(manipulability_failure_rate(TaskKind::Linear, 16_900, 130, 13, clip, 20, &mut rng)?);
                }
            }
            other => return Err(Error::InvalidParameter(format!("unknown check {other:?}"))),
        }
    }
    Ok(reports)
}

fn verify(a: VerifyArgs, seed: u64) -> Result<i32> {
    let names: Vec<&str> = a
        .checks
        .iter()
        .map(|c| match c {
            Check::Series => "series",
            Check::Mu => "mu",
            Check::Concentration => "concentration",
            Check::Subspace => "subspace",
            Check::Tails => "tails",
            Check::Manipulability => "manipulability",
        })
        .collect();
    let reports = verify_reports(&names, seed)?;
    write_rows(&reports, &a.common.out)?;
    for r in reports.iter().filter(|r| !r.pass) {
        eprintln!("bound check failed: {} empirical {} > {}", r.bound_name, r.empirical, r.theoretical);
    }
    Ok(if reports.iter().all(|r| r.pass) {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

fn attack_check(a: AttackCheckArgs, seed: u64) -> Result<i32> {
    let delta = match a.agg {
        AggregatorKind::GeoMed => None,
        AggregatorKind::ClippedMean => Some(a.delta),
        other => {
            return Err(Error::InvalidParameter(format!(
                "attack-check supports geomed and clipmean, got {}",
                other.name()
            )))
        }
    };
    let plan = AttackCheckPlan {
        task: a.task,
        dim: a.dim,
        honest: a.honest,
        poisons: a.poisons,
        delta,
        seeds: (0..a.seeds).map(|i| seed + i).collect(),
        style: PoisonStyle::ZeroFeature,
        tolerance: 1e-6,
    };
    let rows = run_attack_check(&plan)?;
    write_json(&rows, &a.common.out)?;
    Ok(EXIT_OK)
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_rows<R: CsvRow + Serialize>(rows: &[R], path: &Path) -> Result<()> {
    if is_json(path) {
        write_json(rows, path)
    } else {
        write_csv(rows, create(path)?)
    }
}

fn write_json<R: Serialize>(rows: &[R], path: &Path) -> Result<()> {
    serde_json::to_writer_pretty(create(path)?, rows).map_err(|e| Error::Io(e.to_string()))
}
