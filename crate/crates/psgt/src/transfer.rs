//! The per-target transfer pipeline and its two baselines.
//!
//! `run_psgt` stages, for one target subject:
//! rank sources -> keep top k -> exact Shapley over the kept subjects ->
//! squash + normalise into weights -> per-subject instance quotas under a
//! hard cap -> sampled-coalition instance scores -> keep helpful instances
//! -> retrain -> test metrics. `run_st` transfers every record of the top-k
//! subjects; `run_rf` trains on the target's own records alone. All three
//! share splits, stage seeds, and forest settings.

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{
    feature_matrix, make_target_split, DatasetError, Record, SubjectSeries, TargetKind, FEATURES,
};
use crate::forest::metrics::{self, MetricsError, MetricsReport};
use crate::forest::{Forest, ForestConfig, ForestError};
use crate::matrix::Matrix;
use crate::seeding;
use crate::shapley::{
    build_family, exact_shapley, simplified_shapley, FamilyPolicy, Game, ShapleyError,
    ShapleyVector,
};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Shapley(#[from] ShapleyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("requested top {requested} subjects but only {available} are ranked")]
    NotEnoughSubjects { requested: usize, available: usize },
    #[error("no source subject has enough records to rank")]
    NoUsableSources,
    #[error("source pool contains the target subject {subject_id}")]
    TargetInSources { subject_id: u32 },
}

/// Settings for one transfer run. `cap_divisor` is the `L` in the selection
/// cap `floor(n / L)` over the target's total record count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferConfig {
    pub k: usize,
    pub cap_divisor: usize,
    pub coalition_samples: usize,
    pub forest: ForestConfig,
    pub seed: u64,
    /// Sensitivity switch: when set, subject-game coalitions train without
    /// the target's own records (the empty coalition still evaluates the
    /// target-only model so the baseline stays defined).
    pub coalition_only_subject_payoff: bool,
}

impl TransferConfig {
    /// Shipped defaults per prediction target: k = 5 and a cap divisor of 5
    /// for motor UPDRS, 6 for total UPDRS.
    pub fn for_target(kind: TargetKind) -> Self {
        TransferConfig {
            k: 5,
            cap_divisor: match kind {
                TargetKind::Motor => 5,
                TargetKind::Total => 6,
            },
            coalition_samples: 256,
            forest: ForestConfig::for_target(kind),
            seed: 0,
            coalition_only_subject_payoff: false,
        }
    }
}

/// One ranked source subject: validation MAE of a forest trained on that
/// subject's records alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectScore {
    pub subject_id: u32,
    pub val_mae: f64,
}

/// Source subjects sorted by ascending (val_mae, subject_id).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRanking {
    entries: Vec<SubjectScore>,
}

impl SubjectRanking {
    pub fn entries(&self) -> &[SubjectScore] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Game results for one transferred subject.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectImportance {
    pub subject_id: u32,
    /// Raw Shapley value of the subject in the coalition game.
    pub phi: f64,
    /// Squashed into (0, 1); loss reductions score above one half.
    pub phi_pos: f64,
    /// Normalised share of the instance budget.
    pub psi: f64,
    /// Instance quota allocated from psi.
    pub num_i: usize,
    /// Records the subject has on offer.
    pub m_i: usize,
}

/// Sampled-coalition contribution estimate for one candidate record.
/// `phi` is `None` when the record appeared in no sampled coalition; such
/// records rank last and are never transferred.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceScore {
    pub subject_id: u32,
    pub record_index: usize,
    pub phi: Option<f64>,
}

/// A record picked for transfer, with its contribution estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectedInstance {
    pub subject_id: u32,
    pub record_index: usize,
    pub phi: f64,
}

/// Everything the selection stage decided for one target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferPlan {
    /// Top-k subject ids in ranking order.
    pub transferred: Vec<u32>,
    pub importances: Vec<SubjectImportance>,
    /// Selected instances, sorted by (subject_id, record_index).
    pub selected: Vec<SelectedInstance>,
    /// Hard cap: floor(target record count / cap_divisor).
    pub cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rf,
    St,
    Psgt,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Rf => write!(f, "rf"),
            Method::St => write!(f, "st"),
            Method::Psgt => write!(f, "psgt"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rf" => Ok(Method::Rf),
            "st" => Ok(Method::St),
            "psgt" => Ok(Method::Psgt),
            other => Err(format!("unknown method {other:?}; expected rf, st, or psgt")),
        }
    }
}

/// Outcome of one (target, method) run. Metrics come from the held-out test
/// records only.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub target_id: u32,
    pub method: Method,
    pub metrics: MetricsReport,
    /// Top-k subjects with their ranking scores (st and psgt).
    pub transferred: Option<Vec<SubjectScore>>,
    /// Instance-level decisions (psgt only).
    pub plan: Option<TransferPlan>,
}

fn stage_forest(cfg: &TransferConfig, tag: u64, target_id: u32) -> ForestConfig {
    ForestConfig {
        seed: seeding::mix(&[cfg.seed, tag, u64::from(target_id)]),
        ..cfg.forest.clone()
    }
}

/// Feature matrix and labels for the records at `idx`, in index order.
fn matrix_at(records: &[Record], idx: &[usize], kind: TargetKind) -> (Matrix, Vec<f64>) {
    let mut x = Matrix::with_capacity(FEATURES, idx.len());
    let mut y = Vec::with_capacity(idx.len());
    for &i in idx {
        x.push_row(&records[i].features());
        y.push(records[i].label(kind));
    }
    (x, y)
}

/// Ranks every usable source subject by the validation MAE of a forest
/// trained on that subject's records alone. Subjects with fewer than two
/// records cannot carry a model and are skipped with a warning. Ties resolve
/// by ascending subject id; the returned ranking is ascending, best first.
pub fn rank_subjects(
    source: &[SubjectSeries],
    kind: TargetKind,
    val_x: &Matrix,
    val_y: &[f64],
    forest_cfg: &ForestConfig,
) -> Result<SubjectRanking, TransferError> {
    let mut entries = Vec::with_capacity(source.len());
    for subject in source {
        if subject.records.len() < 2 {
            log::warn!(
                "skipping source subject {}: {} record(s) are too few to rank",
                subject.subject_id,
                subject.records.len()
            );
            continue;
        }
        let (x, y) = feature_matrix(&subject.records, kind);
        let cfg = ForestConfig {
            seed: seeding::mix(&[forest_cfg.seed, u64::from(subject.subject_id)]),
            ..forest_cfg.clone()
        };
        let forest = Forest::fit(&x, &y, &cfg)?;
        let predictions = forest.predict_rows(val_x)?;
        let val_mae = metrics::mae(val_y, &predictions)?;
        entries.push(SubjectScore { subject_id: subject.subject_id, val_mae });
    }
    if entries.is_empty() {
        return Err(TransferError::NoUsableSources);
    }
    entries.sort_by(|a, b| {
        a.val_mae.total_cmp(&b.val_mae).then(a.subject_id.cmp(&b.subject_id))
    });
    Ok(SubjectRanking { entries })
}

/// First `k` subjects of the ranking, in ranking order.
pub fn select_top_k(ranking: &SubjectRanking, k: usize) -> Result<Vec<u32>, TransferError> {
    if k > ranking.len() {
        return Err(TransferError::NotEnoughSubjects { requested: k, available: ranking.len() });
    }
    Ok(ranking.entries[..k].iter().map(|e| e.subject_id).collect())
}

/// Borrowed view of one target's training and validation sets. Every game
/// payoff trains on (a superset of) the former and scores on the latter.
#[derive(Clone, Copy)]
pub struct TargetView<'a> {
    pub train_x: &'a Matrix,
    pub train_y: &'a [f64],
    pub val_x: &'a Matrix,
    pub val_y: &'a [f64],
}

/// Exact Shapley game over the kept subjects. A coalition's payoff is the
/// validation MAE of a forest trained on the target's training records plus
/// every record of the coalition's subjects; the same stage seed is reused
/// for every coalition so payoff differences reflect data, not resampling.
pub fn subject_shapley(
    subjects: &[&SubjectSeries],
    kind: TargetKind,
    view: TargetView<'_>,
    forest_cfg: &ForestConfig,
    coalition_only: bool,
) -> Result<Vec<SubjectImportance>, TransferError> {
    let blocks: Vec<(Matrix, Vec<f64>)> =
        subjects.iter().map(|s| feature_matrix(&s.records, kind)).collect();

    let payoff = |coalition: &[usize]| -> f64 {
        let mut x;
        let mut y;
        if coalition_only && !coalition.is_empty() {
            x = Matrix::new(FEATURES);
            y = Vec::new();
        } else {
            x = view.train_x.clone();
            y = view.train_y.to_vec();
        }
        for &s in coalition {
            let (bx, by) = &blocks[s];
            x = x.vstack(bx);
            y.extend_from_slice(by);
        }
        coalition_payoff(&x, &y, view, forest_cfg)
    };

    let game = Game::new(subjects.len(), payoff);
    let phi = exact_shapley(&game)?;
    let vector = ShapleyVector::from_phi(phi)?;

    Ok(subjects
        .iter()
        .enumerate()
        .map(|(i, s)| SubjectImportance {
            subject_id: s.subject_id,
            phi: vector.phi[i],
            phi_pos: vector.phi_pos[i],
            psi: vector.psi[i],
            num_i: 0,
            m_i: s.records.len(),
        })
        .collect())
}

/// Loss payoff shared by both games: MAE on the view's validation records of
/// a forest trained on `(x, y)`. An unexpectedly failing fit maps to
/// infinity, which the Shapley drivers reject as non-finite rather than
/// silently absorbing.
fn coalition_payoff(x: &Matrix, y: &[f64], view: TargetView<'_>, forest_cfg: &ForestConfig) -> f64 {
    let forest = match Forest::fit(x, y, forest_cfg) {
        Ok(f) => f,
        Err(_) => return f64::INFINITY,
    };
    match forest.predict_rows(view.val_x) {
        Ok(p) => metrics::mae(view.val_y, &p).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    }
}

/// Instance quotas: `floor(psi_i * budget)` clamped to the subject's record
/// count. Surplus freed by the clamp is not redistributed.
pub fn allocate_counts(shares: &[(f64, usize)], budget: usize) -> Vec<usize> {
    shares
        .iter()
        .map(|&(psi, m_i)| (((psi * budget as f64).floor()) as usize).min(m_i))
        .collect()
}

/// Scores every record of one subject with the sampled-coalition estimator.
/// A coalition's payoff is the validation MAE of a forest trained on the
/// target's training records plus the coalition's records, minus
/// `baseline_mae` (the same model without any transfer), so negative scores
/// mean the records helped.
pub fn score_instances(
    subject: &SubjectSeries,
    kind: TargetKind,
    view: TargetView<'_>,
    forest_cfg: &ForestConfig,
    baseline_mae: f64,
    policy: FamilyPolicy,
) -> Result<Vec<InstanceScore>, TransferError> {
    let m = subject.records.len();
    let (sx, sy) = feature_matrix(&subject.records, kind);

    let payoff = |coalition: &[usize]| -> f64 {
        if coalition.is_empty() {
            return 0.0;
        }
        let mut x = view.train_x.clone();
        let mut y = view.train_y.to_vec();
        for &i in coalition {
            x.push_row(sx.row(i));
            y.push(sy[i]);
        }
        coalition_payoff(&x, &y, view, forest_cfg) - baseline_mae
    };

    let game = Game::new(m, payoff);
    let family = build_family(m, policy)?;
    let phi = simplified_shapley(&game, &family)?;

    Ok(phi
        .into_iter()
        .enumerate()
        .map(|(record_index, phi)| InstanceScore {
            subject_id: subject.subject_id,
            record_index,
            phi,
        })
        .collect())
}

/// Applies the quotas: per subject, take the `quota` lowest-scoring records
/// (ties broken by record index), then drop everything that scored above
/// zero. Unscored records never qualify. The union is returned sorted by
/// (subject_id, record_index).
pub fn select_instances(
    scores: &[Vec<InstanceScore>],
    quotas: &[usize],
) -> Vec<SelectedInstance> {
    debug_assert_eq!(scores.len(), quotas.len());
    let mut selected = Vec::new();
    for (subject_scores, &quota) in scores.iter().zip(quotas) {
        let mut scored: Vec<(f64, u32, usize)> = subject_scores
            .iter()
            .filter_map(|s| s.phi.map(|phi| (phi, s.subject_id, s.record_index)))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for &(phi, subject_id, record_index) in scored.iter().take(quota) {
            if phi > 0.0 {
                break;
            }
            selected.push(SelectedInstance { subject_id, record_index, phi });
        }
    }
    selected.sort_by(|a, b| {
        a.subject_id.cmp(&b.subject_id).then(a.record_index.cmp(&b.record_index))
    });
    selected
}

fn check_sources(target: &SubjectSeries, source: &[SubjectSeries]) -> Result<(), TransferError> {
    if source.iter().any(|s| s.subject_id == target.subject_id) {
        return Err(TransferError::TargetInSources { subject_id: target.subject_id });
    }
    Ok(())
}

struct SplitData {
    train_x: Matrix,
    train_y: Vec<f64>,
    val_x: Matrix,
    val_y: Vec<f64>,
    test_x: Matrix,
    test_y: Vec<f64>,
}

impl SplitData {
    fn view(&self) -> TargetView<'_> {
        TargetView {
            train_x: &self.train_x,
            train_y: &self.train_y,
            val_x: &self.val_x,
            val_y: &self.val_y,
        }
    }
}

fn split_target(
    target: &SubjectSeries,
    kind: TargetKind,
    split_seed: u64,
) -> Result<SplitData, TransferError> {
    let split = make_target_split(target, split_seed)?;
    let (train_x, train_y) = matrix_at(&target.records, &split.train_idx, kind);
    let (val_x, val_y) = matrix_at(&target.records, &split.val_idx, kind);
    let (test_x, test_y) = matrix_at(&target.records, &split.test_idx, kind);
    Ok(SplitData { train_x, train_y, val_x, val_y, test_x, test_y })
}

fn test_metrics(
    x: &Matrix,
    y: &[f64],
    test_x: &Matrix,
    test_y: &[f64],
    forest_cfg: &ForestConfig,
) -> Result<MetricsReport, TransferError> {
    let forest = Forest::fit(x, y, forest_cfg)?;
    let predictions = forest.predict_rows(test_x)?;
    Ok(metrics::report(test_y, &predictions)?)
}

/// Target-only baseline: train on the target's training records, report on
/// its test records.
pub fn run_rf(
    target: &SubjectSeries,
    kind: TargetKind,
    cfg: &TransferConfig,
    split_seed: u64,
) -> Result<RunResult, TransferError> {
    let data = split_target(target, kind, split_seed)?;
    let final_cfg = stage_forest(cfg, seeding::TAG_STAGE_FINAL, target.subject_id);
    let metrics = test_metrics(&data.train_x, &data.train_y, &data.test_x, &data.test_y, &final_cfg)?;
    Ok(RunResult {
        target_id: target.subject_id,
        method: Method::Rf,
        metrics,
        transferred: None,
        plan: None,
    })
}

fn ranked_top(
    target: &SubjectSeries,
    source: &[SubjectSeries],
    kind: TargetKind,
    cfg: &TransferConfig,
    data: &SplitData,
) -> Result<Vec<SubjectScore>, TransferError> {
    let rank_cfg = stage_forest(cfg, seeding::TAG_STAGE_RANK, target.subject_id);
    let ranking = rank_subjects(source, kind, &data.val_x, &data.val_y, &rank_cfg)?;
    let k = if cfg.k > ranking.len() {
        log::warn!(
            "target {}: only {} rankable source subjects, clamping k from {}",
            target.subject_id,
            ranking.len(),
            cfg.k
        );
        ranking.len()
    } else {
        cfg.k
    };
    Ok(ranking.entries()[..k].to_vec())
}

/// Appends every record of `subjects` (ascending subject id, stored record
/// order) to the training set.
fn extend_with_all(
    base_x: &Matrix,
    base_y: &[f64],
    subjects: &[&SubjectSeries],
    kind: TargetKind,
) -> (Matrix, Vec<f64>) {
    let mut order: Vec<&&SubjectSeries> = subjects.iter().collect();
    order.sort_by_key(|s| s.subject_id);
    let mut x = base_x.clone();
    let mut y = base_y.to_vec();
    for s in order {
        let (bx, by) = feature_matrix(&s.records, kind);
        x = x.vstack(&bx);
        y.extend_from_slice(&by);
    }
    (x, y)
}

/// Whole-subject transfer baseline: adopt every record of the top-k ranked
/// subjects, then train and evaluate exactly like the other methods.
pub fn run_st(
    target: &SubjectSeries,
    source: &[SubjectSeries],
    kind: TargetKind,
    cfg: &TransferConfig,
    split_seed: u64,
) -> Result<RunResult, TransferError> {
    check_sources(target, source)?;
    let data = split_target(target, kind, split_seed)?;
    let top = ranked_top(target, source, kind, cfg, &data)?;
    let subjects: Vec<&SubjectSeries> = top
        .iter()
        .map(|e| source.iter().find(|s| s.subject_id == e.subject_id).expect("ranked id exists"))
        .collect();

    let (x, y) = extend_with_all(&data.train_x, &data.train_y, &subjects, kind);
    let final_cfg = stage_forest(cfg, seeding::TAG_STAGE_FINAL, target.subject_id);
    let metrics = test_metrics(&x, &y, &data.test_x, &data.test_y, &final_cfg)?;
    Ok(RunResult {
        target_id: target.subject_id,
        method: Method::St,
        metrics,
        transferred: Some(top),
        plan: None,
    })
}

/// The full game-based pipeline for one target subject.
pub fn run_psgt(
    target: &SubjectSeries,
    source: &[SubjectSeries],
    kind: TargetKind,
    cfg: &TransferConfig,
    split_seed: u64,
) -> Result<RunResult, TransferError> {
    check_sources(target, source)?;
    let data = split_target(target, kind, split_seed)?;
    let top = ranked_top(target, source, kind, cfg, &data)?;
    let subjects: Vec<&SubjectSeries> = top
        .iter()
        .map(|e| source.iter().find(|s| s.subject_id == e.subject_id).expect("ranked id exists"))
        .collect();

    let payoff_cfg = stage_forest(cfg, seeding::TAG_STAGE_PAYOFF, target.subject_id);
    let mut importances = subject_shapley(
        &subjects,
        kind,
        data.view(),
        &payoff_cfg,
        cfg.coalition_only_subject_payoff,
    )?;

    let cap = target.records.len() / cfg.cap_divisor;
    let shares: Vec<(f64, usize)> = importances.iter().map(|s| (s.psi, s.m_i)).collect();
    let quotas = allocate_counts(&shares, cap);
    for (imp, &q) in importances.iter_mut().zip(&quotas) {
        imp.num_i = q;
    }

    let baseline_mae = coalition_payoff(&data.train_x, &data.train_y, data.view(), &payoff_cfg);
    let mut scores: Vec<Vec<InstanceScore>> = Vec::with_capacity(subjects.len());
    for (subject, &quota) in subjects.iter().zip(&quotas) {
        if quota == 0 {
            scores.push(Vec::new());
            continue;
        }
        let family_seed = seeding::mix(&[
            cfg.seed,
            seeding::TAG_STAGE_FAMILY,
            u64::from(target.subject_id),
            u64::from(subject.subject_id),
        ]);
        scores.push(score_instances(
            subject,
            kind,
            data.view(),
            &payoff_cfg,
            baseline_mae,
            FamilyPolicy::Sampled { count: cfg.coalition_samples, seed: family_seed },
        )?);
    }

    let selected = select_instances(&scores, &quotas);
    debug_assert!(selected.len() <= cap, "selection must respect the cap");

    // Extend the training set with the selected records, sorted by
    // (subject_id, record_index); an empty selection leaves the training
    // set byte-identical to the rf baseline's.
    let mut x = data.train_x.clone();
    let mut y = data.train_y.clone();
    for sel in &selected {
        let subject = subjects
            .iter()
            .find(|s| s.subject_id == sel.subject_id)
            .expect("selected id comes from the ranked subjects");
        let record = &subject.records[sel.record_index];
        x.push_row(&record.features());
        y.push(record.label(kind));
    }

    let final_cfg = stage_forest(cfg, seeding::TAG_STAGE_FINAL, target.subject_id);
    let metrics = test_metrics(&x, &y, &data.test_x, &data.test_y, &final_cfg)?;

    let plan = TransferPlan {
        transferred: top.iter().map(|e| e.subject_id).collect(),
        importances,
        selected,
        cap,
    };
    Ok(RunResult {
        target_id: target.subject_id,
        method: Method::Psgt,
        metrics,
        transferred: Some(top),
        plan: Some(plan),
    })
}
