//! End-to-end integration tests: CSV in, reports out, plus the cross-method
//! and determinism guarantees the pipeline advertises.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use psgt::dataset::{load_dataset, SubjectSeries, TargetKind};
use psgt::experiment::{self, ExperimentConfig};
use psgt::transfer::Method;

use common::{synth_subject, write_csv};

/// Four clean subjects drawn from one generating process plus one that
/// disagrees with everyone.
fn mixed_cohort() -> Vec<SubjectSeries> {
    let mut subjects: Vec<SubjectSeries> =
        (1..=4).map(|id| synth_subject(id, 15, 0.0, 0.5, 4000 + u64::from(id))).collect();
    subjects.push(synth_subject(5, 15, 45.0, 0.5, 4005));
    subjects
}

fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults_for(TargetKind::Motor);
    cfg.k = 2;
    cfg.n_trees = 6;
    cfg.max_depth = 6;
    cfg.coalition_samples = 12;
    cfg.seeds = vec![1];
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn full_run_from_csv_produces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "cohort.csv", &mixed_cohort());
    let dataset = load_dataset(&csv, TargetKind::Motor).unwrap();
    assert_eq!(dataset.subjects.len(), 5);
    assert_eq!(dataset.total_records(), 75);

    let mut cfg = small_config(&dir.path().join("out"));
    cfg.data_path = csv;
    let outcome = experiment::run_experiment(&cfg, &dataset).unwrap();
    assert!(outcome.failures.is_empty(), "failures: {:?}", outcome.failures);
    assert_eq!(outcome.results.len(), 5 * 3, "one run per target and method");

    for name in ["aggregate.csv", "per_target.json", "contributions.csv", "run_config.json"] {
        assert!(cfg.output_dir.join(name).exists(), "{name} must be written");
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.output_dir.join("per_target.json")).unwrap())
            .unwrap();
    assert_eq!(json["results"].as_array().unwrap().len(), 15);
    assert!(json["failures"].as_array().unwrap().is_empty());
}

fn report_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ["aggregate.csv", "per_target.json", "contributions.csv"]
        .iter()
        .map(|name| (name.to_string(), fs::read(dir.join(name)).expect("report file")))
        .collect()
}

#[test]
fn reports_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "cohort.csv", &mixed_cohort());
    let dataset = load_dataset(&csv, TargetKind::Motor).unwrap();

    let mut narrow = small_config(&dir.path().join("narrow"));
    narrow.workers = Some(1);
    let mut wide = small_config(&dir.path().join("wide"));
    wide.workers = Some(4);

    experiment::run_experiment(&narrow, &dataset).unwrap();
    experiment::run_experiment(&wide, &dataset).unwrap();

    for ((name, a), (_, b)) in report_bytes(&narrow.output_dir)
        .into_iter()
        .zip(report_bytes(&wide.output_dir))
    {
        assert_eq!(a, b, "{name} must not depend on the worker count");
    }
}

#[test]
fn rerunning_reproduces_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "cohort.csv", &mixed_cohort());
    let dataset = load_dataset(&csv, TargetKind::Motor).unwrap();

    let first = small_config(&dir.path().join("first"));
    let second = small_config(&dir.path().join("second"));
    experiment::run_experiment(&first, &dataset).unwrap();
    experiment::run_experiment(&second, &dataset).unwrap();

    for ((name, a), (_, b)) in
        report_bytes(&first.output_dir).into_iter().zip(report_bytes(&second.output_dir))
    {
        assert_eq!(a, b, "{name} must be reproducible");
    }
}

#[test]
fn oversized_cap_divisor_reduces_every_target_to_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "cohort.csv", &mixed_cohort());
    let dataset = load_dataset(&csv, TargetKind::Motor).unwrap();

    let mut cfg = small_config(dir.path());
    cfg.cap_divisor = 10_000;
    cfg.methods = vec![Method::Rf, Method::Psgt];
    let outcome = experiment::execute(&cfg, &dataset).unwrap();

    for target in dataset.subjects.iter().map(|s| s.subject_id) {
        let of = |method: Method| {
            &outcome
                .results
                .iter()
                .find(|r| r.run.target_id == target && r.run.method == method)
                .expect("every run succeeds")
                .run
        };
        let rf = of(Method::Rf);
        let psgt = of(Method::Psgt);
        let plan = psgt.plan.as_ref().expect("selection plan");
        assert_eq!(plan.cap, 0);
        assert!(plan.selected.is_empty());
        assert_eq!(psgt.metrics, rf.metrics, "target {target} must match the baseline exactly");
    }
}

#[test]
fn selection_guards_against_harmful_sources() {
    // Every source disagrees with the target's generating process, so whole-
    // subject transfer is poisoned while instance selection can decline.
    let target = synth_subject(1, 20, 0.0, 0.5, 5001);
    let mut subjects = vec![target];
    for id in 2..=4 {
        subjects.push(synth_subject(id, 12, 50.0, 0.5, 5000 + u64::from(id)));
    }

    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "cohort.csv", &subjects);
    let dataset = load_dataset(&csv, TargetKind::Motor).unwrap();

    let mut cfg = small_config(dir.path());
    cfg.seeds = vec![1, 2, 3];
    let outcome = experiment::execute(&cfg, &dataset).unwrap();

    let mean_mae = |method: Method| {
        let runs: Vec<f64> = outcome
            .results
            .iter()
            .filter(|r| r.run.target_id == 1 && r.run.method == method)
            .map(|r| r.run.metrics.mae)
            .collect();
        assert_eq!(runs.len(), 3);
        runs.iter().sum::<f64>() / runs.len() as f64
    };

    let rf = mean_mae(Method::Rf);
    let st = mean_mae(Method::St);
    let psgt = mean_mae(Method::Psgt);
    assert!(
        st > rf + 5.0,
        "adopting every record of disagreeing sources must poison st (rf {rf}, st {st})"
    );
    assert!(
        psgt < st,
        "instance selection must refuse most of the poison (psgt {psgt}, st {st})"
    );
}

#[test]
fn matching_sources_do_not_hurt_the_target() {
    // Sources share the target's generating process; selected instances are
    // in-distribution, so transfer should on average help a data-poor target.
    let mut subjects = vec![synth_subject(1, 12, 0.0, 1.0, 6001)];
    for id in 2..=4 {
        subjects.push(synth_subject(id, 20, 0.0, 1.0, 6000 + u64::from(id)));
    }

    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "cohort.csv", &subjects);
    let dataset = load_dataset(&csv, TargetKind::Motor).unwrap();

    let mut cfg = small_config(dir.path());
    cfg.n_trees = 10;
    cfg.seeds = vec![1, 2, 3, 4, 5];
    let outcome = experiment::execute(&cfg, &dataset).unwrap();

    let mean_mae = |method: Method| {
        let runs: Vec<f64> = outcome
            .results
            .iter()
            .filter(|r| r.run.target_id == 1 && r.run.method == method)
            .map(|r| r.run.metrics.mae)
            .collect();
        runs.iter().sum::<f64>() / runs.len() as f64
    };

    let rf = mean_mae(Method::Rf);
    let psgt = mean_mae(Method::Psgt);
    assert!(
        psgt <= rf * 1.05,
        "in-distribution transfer must not degrade the target (rf {rf}, psgt {psgt})"
    );
}

#[test]
fn aggregate_rows_match_recomputed_means() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "cohort.csv", &mixed_cohort());
    let dataset = load_dataset(&csv, TargetKind::Motor).unwrap();

    let mut cfg = small_config(dir.path());
    cfg.seeds = vec![1, 2];
    let outcome = experiment::execute(&cfg, &dataset).unwrap();

    for agg in &outcome.aggregates {
        let group: Vec<f64> = outcome
            .results
            .iter()
            .filter(|r| r.run.method == agg.method && agg.seed.is_none_or(|s| r.seed == s))
            .map(|r| r.run.metrics.mae)
            .collect();
        assert_eq!(group.len(), agg.runs);
        let mean = group.iter().sum::<f64>() / group.len() as f64;
        let var = group.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / group.len() as f64;
        assert!((agg.mae_mean - mean).abs() < 1e-12);
        assert!((agg.mae_std - var.sqrt()).abs() < 1e-12);
    }
}

fn psgt_binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_psgt"))
}

#[test]
fn cli_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "cohort.csv", &mixed_cohort());
    let out = dir.path().join("out");

    let status = psgt_binary()
        .args([
            "run",
            "--data",
            csv.to_str().unwrap(),
            "--target",
            "motor",
            "--k",
            "2",
            "--trees",
            "6",
            "--depth",
            "6",
            "--coalition-samples",
            "12",
            "--seeds",
            "1",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .expect("binary must launch");
    assert!(status.success());
    for name in ["aggregate.csv", "per_target.json", "contributions.csv", "run_config.json"] {
        assert!(out.join(name).exists(), "{name} must be written");
    }
}

#[test]
fn cli_fails_without_a_dataset() {
    let output = psgt_binary()
        .arg("run")
        .env_remove("PSGT_DATA")
        .output()
        .expect("binary must launch");
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("PSGT_DATA"), "stderr must point at the data flag: {stderr}");
}

#[test]
fn cli_sweeps_k() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "cohort.csv", &mixed_cohort());
    let out = dir.path().join("out");

    let status = psgt_binary()
        .args([
            "sweep-k",
            "--data",
            csv.to_str().unwrap(),
            "--methods",
            "psgt",
            "--trees",
            "6",
            "--depth",
            "6",
            "--coalition-samples",
            "12",
            "--seeds",
            "1",
            "--k",
            "1:2",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .expect("binary must launch");
    assert!(status.success());
    let sweep = fs::read_to_string(out.join("sweep_k.csv")).unwrap();
    let mut lines = sweep.lines();
    assert!(lines.next().unwrap().starts_with("k,method,seed"));
    assert!(sweep.lines().skip(1).any(|l| l.starts_with("1,psgt")));
    assert!(sweep.lines().skip(1).any(|l| l.starts_with("2,psgt")));
}
