//! Experiment orchestration: fans one configuration out over every
//! (seed, target subject, method) job, collects per-run results and
//! failures, aggregates test metrics, and writes the report files.
//!
//! Jobs are independent, so they run through [`crate::par`] and reduce in a
//! fixed order; the written reports are byte-identical for any worker count.

use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{Dataset, SubjectSeries, TargetKind};
use crate::forest::metrics::MetricsReport;
use crate::forest::ForestConfig;
use crate::par;
use crate::transfer::{
    run_psgt, run_rf, run_st, Method, RunResult, TransferConfig, TransferError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("failed to serialize {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("no methods requested")]
    NoMethods,
    #[error("no seeds requested")]
    NoSeeds,
}

/// One resolved experiment: which data to model, which methods to compare,
/// and every tunable the pipeline exposes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub data_path: PathBuf,
    pub target_kind: TargetKind,
    pub methods: Vec<Method>,
    /// Source subjects kept after ranking.
    pub k: usize,
    /// Divisor in the selection cap `floor(target records / cap_divisor)`.
    pub cap_divisor: usize,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub mtry: usize,
    /// Coalitions sampled per subject in the instance games.
    pub coalition_samples: usize,
    /// Experiment repetitions; each seed redraws splits and forests.
    pub seeds: Vec<u64>,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
    pub output_dir: PathBuf,
    /// Train subject-game coalitions without the target's own records.
    pub coalition_only_subject_payoff: bool,
}

impl ExperimentConfig {
    /// Shipped defaults for one prediction target; `data_path` and
    /// `output_dir` still need to be pointed somewhere real.
    pub fn defaults_for(kind: TargetKind) -> Self {
        let transfer = TransferConfig::for_target(kind);
        ExperimentConfig {
            data_path: PathBuf::from("data/parkinsons_updrs.data"),
            target_kind: kind,
            methods: vec![Method::Rf, Method::St, Method::Psgt],
            k: transfer.k,
            cap_divisor: transfer.cap_divisor,
            n_trees: transfer.forest.n_trees,
            max_depth: transfer.forest.max_depth,
            min_samples_leaf: transfer.forest.min_samples_leaf,
            mtry: transfer.forest.mtry,
            coalition_samples: transfer.coalition_samples,
            seeds: vec![0],
            workers: None,
            output_dir: PathBuf::from("out"),
            coalition_only_subject_payoff: false,
        }
    }

    fn transfer_config(&self, seed: u64) -> TransferConfig {
        TransferConfig {
            k: self.k,
            cap_divisor: self.cap_divisor,
            coalition_samples: self.coalition_samples,
            forest: ForestConfig {
                n_trees: self.n_trees,
                max_depth: self.max_depth,
                min_samples_leaf: self.min_samples_leaf,
                mtry: self.mtry,
                // Placeholder: every stage derives its own forest seed from
                // the run seed, stage tag, and target id.
                seed: 0,
            },
            seed,
            coalition_only_subject_payoff: self.coalition_only_subject_payoff,
        }
    }
}

/// One successful run, tagged with the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededRun {
    pub seed: u64,
    pub run: RunResult,
}

/// One failed run; the experiment records it and keeps going.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetFailure {
    pub seed: u64,
    pub target_id: u32,
    pub method: Method,
    pub message: String,
}

/// Mean and population standard deviation of each test metric over a group
/// of runs: one row per (method, seed) plus a pooled row per method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub method: Method,
    /// `None` pools every seed.
    pub seed: Option<u64>,
    pub runs: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub vol_mean: f64,
    pub vol_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub results: Vec<SeededRun>,
    pub failures: Vec<TargetFailure>,
    pub aggregates: Vec<AggregateReport>,
}

impl ExperimentOutcome {
    /// Metric means over the given method's successful runs, every seed
    /// pooled. `None` if the method never succeeded.
    pub fn pooled(&self, method: Method) -> Option<&AggregateReport> {
        self.aggregates.iter().find(|a| a.method == method && a.seed.is_none())
    }
}

fn run_one(
    target: &SubjectSeries,
    pool: &[SubjectSeries],
    kind: TargetKind,
    method: Method,
    cfg: &TransferConfig,
    seed: u64,
) -> Result<RunResult, TransferError> {
    match method {
        Method::Rf => run_rf(target, kind, cfg, seed),
        Method::St => run_st(target, pool, kind, cfg, seed),
        Method::Psgt => run_psgt(target, pool, kind, cfg, seed),
    }
}

/// Runs every (seed, target, method) job and aggregates the results.
/// Individual job failures (for example a subject too small to split) are
/// recorded and do not abort the rest.
pub fn execute(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentOutcome, ExperimentError> {
    if cfg.methods.is_empty() {
        return Err(ExperimentError::NoMethods);
    }
    if cfg.seeds.is_empty() {
        return Err(ExperimentError::NoSeeds);
    }

    // Each target's source pool is every other subject.
    let pools: Vec<Vec<SubjectSeries>> = (0..dataset.subjects.len())
        .map(|t| {
            dataset
                .subjects
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != t)
                .map(|(_, s)| s.clone())
                .collect()
        })
        .collect();

    let mut jobs = Vec::new();
    for &seed in &cfg.seeds {
        for (t, target) in dataset.subjects.iter().enumerate() {
            for &method in &cfg.methods {
                jobs.push((seed, t, target, method));
            }
        }
    }

    let kind = dataset.target_kind;
    let outcomes: Vec<(u64, Result<RunResult, TransferError>)> =
        par::with_workers(cfg.workers.unwrap_or(0), || {
            par::map_slice(&jobs, |&(seed, t, target, method)| {
                let tc = cfg.transfer_config(seed);
                (seed, run_one(target, &pools[t], kind, method, &tc, seed))
            })
        });

    let mut results = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for ((seed, outcome), &(_, _, target, method)) in outcomes.into_iter().zip(&jobs) {
        match outcome {
            Ok(run) => results.push(SeededRun { seed, run }),
            Err(err) => {
                log::warn!(
                    "target {} method {} seed {}: {}",
                    target.subject_id,
                    method,
                    seed,
                    err
                );
                failures.push(TargetFailure {
                    seed,
                    target_id: target.subject_id,
                    method,
                    message: err.to_string(),
                });
            }
        }
    }

    let aggregates = aggregate(&results, &cfg.methods, &cfg.seeds);
    Ok(ExperimentOutcome { results, failures, aggregates })
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn aggregate_group(method: Method, seed: Option<u64>, group: &[&MetricsReport]) -> AggregateReport {
    let maes: Vec<f64> = group.iter().map(|m| m.mae).collect();
    let rmses: Vec<f64> = group.iter().map(|m| m.rmse).collect();
    let vols: Vec<f64> = group.iter().map(|m| m.vol).collect();
    let (mae_mean, mae_std) = mean_and_std(&maes);
    let (rmse_mean, rmse_std) = mean_and_std(&rmses);
    let (vol_mean, vol_std) = mean_and_std(&vols);
    AggregateReport {
        method,
        seed,
        runs: group.len(),
        mae_mean,
        mae_std,
        rmse_mean,
        rmse_std,
        vol_mean,
        vol_std,
    }
}

/// One row per (method, seed) with at least one successful run, then a
/// pooled row per method, in the configured method and seed order.
fn aggregate(results: &[SeededRun], methods: &[Method], seeds: &[u64]) -> Vec<AggregateReport> {
    let mut rows = Vec::new();
    for &method in methods {
        for &seed in seeds {
            let group: Vec<&MetricsReport> = results
                .iter()
                .filter(|r| r.seed == seed && r.run.method == method)
                .map(|r| &r.run.metrics)
                .collect();
            if !group.is_empty() {
                rows.push(aggregate_group(method, Some(seed), &group));
            }
        }
        let group: Vec<&MetricsReport> = results
            .iter()
            .filter(|r| r.run.method == method)
            .map(|r| &r.run.metrics)
            .collect();
        if !group.is_empty() {
            rows.push(aggregate_group(method, None, &group));
        }
    }
    rows
}

#[derive(Serialize)]
struct TransferredRow {
    subject_id: u32,
    val_mae: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi_pos: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    psi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_i: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    selected_count: Option<usize>,
}

#[derive(Serialize)]
struct ResultRow {
    seed: u64,
    target_id: u32,
    method: Method,
    mae: f64,
    rmse: f64,
    vol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    spl_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transferred: Option<Vec<TransferredRow>>,
}

#[derive(Serialize)]
struct PerTargetReport<'a> {
    target_kind: TargetKind,
    results: Vec<ResultRow>,
    failures: &'a [TargetFailure],
}

fn result_row(sr: &SeededRun) -> ResultRow {
    let run = &sr.run;
    let transferred = run.transferred.as_ref().map(|scores| {
        scores
            .iter()
            .map(|score| {
                let imp = run
                    .plan
                    .as_ref()
                    .and_then(|p| p.importances.iter().find(|i| i.subject_id == score.subject_id));
                let picked = run.plan.as_ref().map(|p| {
                    p.selected.iter().filter(|s| s.subject_id == score.subject_id).count()
                });
                TransferredRow {
                    subject_id: score.subject_id,
                    val_mae: score.val_mae,
                    phi: imp.map(|i| i.phi),
                    phi_pos: imp.map(|i| i.phi_pos),
                    psi: imp.map(|i| i.psi),
                    num_i: imp.map(|i| i.num_i),
                    selected_count: picked,
                }
            })
            .collect()
    });
    ResultRow {
        seed: sr.seed,
        target_id: run.target_id,
        method: run.method,
        mae: run.metrics.mae,
        rmse: run.metrics.rmse,
        vol: run.metrics.vol,
        spl_size: run.plan.as_ref().map(|p| p.selected.len()),
        cap: run.plan.as_ref().map(|p| p.cap),
        transferred,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.display().to_string(), source }
}

fn write_aggregate_csv(path: &Path, aggregates: &[AggregateReport]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|source| ExperimentError::Csv { path: path.display().to_string(), source })?;
    let to_csv = |source| ExperimentError::Csv { path: path.display().to_string(), source };
    w.write_record([
        "method", "seed", "runs", "mae_mean", "mae_std", "rmse_mean", "rmse_std", "vol_mean",
        "vol_std",
    ])
    .map_err(to_csv)?;
    for a in aggregates {
        let seed = a.seed.map_or_else(|| "all".to_string(), |s| s.to_string());
        w.write_record([
            a.method.to_string(),
            seed,
            a.runs.to_string(),
            format!("{:.6}", a.mae_mean),
            format!("{:.6}", a.mae_std),
            format!("{:.6}", a.rmse_mean),
            format!("{:.6}", a.rmse_std),
            format!("{:.6}", a.vol_mean),
            format!("{:.6}", a.vol_std),
        ])
        .map_err(|source| ExperimentError::Csv { path: path.display().to_string(), source })?;
    }
    w.flush().map_err(io_err(path))
}

/// Per-subject weight shares of each completed selection run, one row per
/// (target, seed), columns padded to the configured k.
fn write_contributions_csv(
    path: &Path,
    results: &[SeededRun],
    k: usize,
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|source| ExperimentError::Csv { path: path.display().to_string(), source })?;
    let mut header = vec!["target_id".to_string(), "seed".to_string()];
    for i in 1..=k {
        header.push(format!("subject_{i}"));
    }
    for i in 1..=k {
        header.push(format!("psi_{i}"));
    }
    w.write_record(&header)
        .map_err(|source| ExperimentError::Csv { path: path.display().to_string(), source })?;

    for sr in results {
        let Some(plan) = &sr.run.plan else { continue };
        let mut row = vec![sr.run.target_id.to_string(), sr.seed.to_string()];
        for i in 0..k {
            row.push(plan.importances.get(i).map_or_else(String::new, |imp| {
                imp.subject_id.to_string()
            }));
        }
        for i in 0..k {
            row.push(plan.importances.get(i).map_or_else(String::new, |imp| {
                format!("{:.6}", imp.psi)
            }));
        }
        w.write_record(&row)
            .map_err(|source| ExperimentError::Csv { path: path.display().to_string(), source })?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|source| ExperimentError::Json { path: path.display().to_string(), source })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Executes the experiment and writes `aggregate.csv`, `per_target.json`,
/// `contributions.csv`, and `run_config.json` into the output directory.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
) -> Result<ExperimentOutcome, ExperimentError> {
    let outcome = execute(cfg, dataset)?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;

    write_aggregate_csv(&cfg.output_dir.join("aggregate.csv"), &outcome.aggregates)?;
    write_contributions_csv(&cfg.output_dir.join("contributions.csv"), &outcome.results, cfg.k)?;

    let report = PerTargetReport {
        target_kind: dataset.target_kind,
        results: outcome.results.iter().map(result_row).collect(),
        failures: &outcome.failures,
    };
    write_json(&cfg.output_dir.join("per_target.json"), &report)?;
    write_json(&cfg.output_dir.join("run_config.json"), cfg)?;

    Ok(outcome)
}

/// Reruns the experiment once per k and returns each k's aggregates;
/// shared settings come from `cfg`.
pub fn sweep_k(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    k_values: &[usize],
) -> Result<Vec<(usize, Vec<AggregateReport>)>, ExperimentError> {
    let mut sweeps = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let run_cfg = ExperimentConfig { k, ..cfg.clone() };
        let outcome = execute(&run_cfg, dataset)?;
        sweeps.push((k, outcome.aggregates));
    }
    Ok(sweeps)
}

/// Writes one sweep row per (k, aggregate row).
pub fn write_sweep_csv(
    path: &Path,
    sweeps: &[(usize, Vec<AggregateReport>)],
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|source| ExperimentError::Csv { path: path.display().to_string(), source })?;
    w.write_record([
        "k", "method", "seed", "runs", "mae_mean", "mae_std", "rmse_mean", "rmse_std",
        "vol_mean", "vol_std",
    ])
    .map_err(|source| ExperimentError::Csv { path: path.display().to_string(), source })?;
    for (k, aggregates) in sweeps {
        for a in aggregates {
            let seed = a.seed.map_or_else(|| "all".to_string(), |s| s.to_string());
            w.write_record([
                k.to_string(),
                a.method.to_string(),
                seed,
                a.runs.to_string(),
                format!("{:.6}", a.mae_mean),
                format!("{:.6}", a.mae_std),
                format!("{:.6}", a.rmse_mean),
                format!("{:.6}", a.rmse_std),
                format!("{:.6}", a.vol_mean),
                format!("{:.6}", a.vol_std),
            ])
            .map_err(|source| ExperimentError::Csv { path: path.display().to_string(), source })?;
        }
    }
    w.flush().map_err(io_err(path))
}
