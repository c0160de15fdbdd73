//! Command-line front end: `psgt run` compares methods on one dataset,
//! `psgt sweep-k` repeats the run over a range of k values.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use psgt::dataset::{load_dataset, TargetKind};
use psgt::experiment::{self, ExperimentConfig};
use psgt::transfer::Method;

#[derive(Parser)]
#[command(
    name = "psgt",
    about = "Per-patient UPDRS prediction with game-based instance transfer",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured methods over every target subject.
    Run(RunArgs),
    /// Rerun the experiment for each k in a range and tabulate the results.
    SweepK(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Telemonitoring CSV; defaults to the PSGT_DATA environment variable.
    #[arg(long)]
    data: Option<PathBuf>,

    /// Which UPDRS score to predict.
    #[arg(long, default_value = "motor")]
    target: TargetKind,

    /// Comma-separated methods to run.
    #[arg(long, value_delimiter = ',', default_value = "rf,st,psgt")]
    methods: Vec<Method>,

    /// Divisor of the instance-transfer cap floor(records / L).
    #[arg(long, value_name = "L")]
    l: Option<usize>,

    /// Trees per forest.
    #[arg(long)]
    trees: Option<usize>,

    /// Maximum tree depth.
    #[arg(long)]
    depth: Option<usize>,

    /// Minimum records per leaf.
    #[arg(long)]
    min_leaf: Option<usize>,

    /// Features tried per split.
    #[arg(long)]
    mtry: Option<usize>,

    /// Coalitions sampled per subject in the instance games.
    #[arg(long)]
    coalition_samples: Option<usize>,

    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,

    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,

    /// Report directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Score subject coalitions without the target's own training records.
    #[arg(long)]
    coalition_only: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Source subjects kept after ranking.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Inclusive k range, written start:end.
    #[arg(long, default_value = "1:10", value_parser = parse_range)]
    k: (usize, usize),
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (start, end) = s
        .split_once(':')
        .ok_or_else(|| format!("expected start:end, got {s:?}"))?;
    let start: usize = start.trim().parse().map_err(|e| format!("bad start: {e}"))?;
    let end: usize = end.trim().parse().map_err(|e| format!("bad end: {e}"))?;
    if start == 0 || end < start {
        return Err(format!("expected 1 <= start <= end, got {s:?}"));
    }
    Ok((start, end))
}

fn resolve_config(common: &CommonArgs, k: Option<usize>) -> Result<ExperimentConfig> {
    let data_path = match &common.data {
        Some(path) => path.clone(),
        None => match std::env::var_os("PSGT_DATA") {
            Some(path) => PathBuf::from(path),
            None => bail!("no dataset: pass --data or set PSGT_DATA"),
        },
    };

    let mut cfg = ExperimentConfig::defaults_for(common.target);
    cfg.data_path = data_path;
    cfg.methods = common.methods.clone();
    cfg.seeds = common.seeds.clone();
    cfg.workers = common.workers;
    cfg.output_dir = common.out.clone();
    cfg.coalition_only_subject_payoff = common.coalition_only;
    if let Some(k) = k {
        cfg.k = k;
    }
    if let Some(l) = common.l {
        cfg.cap_divisor = l;
    }
    if let Some(trees) = common.trees {
        cfg.n_trees = trees;
    }
    if let Some(depth) = common.depth {
        cfg.max_depth = depth;
    }
    if let Some(min_leaf) = common.min_leaf {
        cfg.min_samples_leaf = min_leaf;
    }
    if let Some(mtry) = common.mtry {
        cfg.mtry = mtry;
    }
    if let Some(samples) = common.coalition_samples {
        cfg.coalition_samples = samples;
    }
    Ok(cfg)
}

fn print_aggregates(aggregates: &[psgt::AggregateReport]) {
    println!(
        "{:<6} {:>6} {:>5} {:>10} {:>10} {:>10}",
        "method", "seed", "runs", "mae", "rmse", "vol"
    );
    for a in aggregates {
        let seed = a.seed.map_or_else(|| "all".to_string(), |s| s.to_string());
        println!(
            "{:<6} {:>6} {:>5} {:>10.4} {:>10.4} {:>10.4}",
            a.method.to_string(),
            seed,
            a.runs,
            a.mae_mean,
            a.rmse_mean,
            a.vol_mean
        );
    }
}

fn cmd_run(args: &RunArgs) -> Result<bool> {
    let cfg = resolve_config(&args.common, args.k)?;
    let dataset = load_dataset(&cfg.data_path, cfg.target_kind)
        .with_context(|| format!("loading {}", cfg.data_path.display()))?;
    log::info!(
        "loaded {} subjects / {} records, predicting {} UPDRS",
        dataset.subjects.len(),
        dataset.total_records(),
        dataset.target_kind
    );

    let outcome = experiment::run_experiment(&cfg, &dataset)?;
    print_aggregates(&outcome.aggregates);
    println!(
        "wrote aggregate.csv, per_target.json, contributions.csv, run_config.json to {}",
        cfg.output_dir.display()
    );

    if !outcome.failures.is_empty() {
        eprintln!("{} run(s) failed:", outcome.failures.len());
        for f in &outcome.failures {
            eprintln!(
                "  target {} method {} seed {}: {}",
                f.target_id, f.method, f.seed, f.message
            );
        }
        return Ok(false);
    }
    Ok(true)
}

fn cmd_sweep(args: &SweepArgs) -> Result<bool> {
    let cfg = resolve_config(&args.common, None)?;
    let dataset = load_dataset(&cfg.data_path, cfg.target_kind)
        .with_context(|| format!("loading {}", cfg.data_path.display()))?;

    let (start, end) = args.k;
    let k_values: Vec<usize> = (start..=end).collect();
    let sweeps = experiment::sweep_k(&cfg, &dataset, &k_values)?;

    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let path = cfg.output_dir.join("sweep_k.csv");
    experiment::write_sweep_csv(&path, &sweeps)?;

    for (k, aggregates) in &sweeps {
        println!("k = {k}");
        print_aggregates(aggregates);
    }
    println!("wrote {}", path.display());
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::SweepK(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
