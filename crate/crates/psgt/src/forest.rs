//! Bagged CART regression forest.
//!
//! Each tree is grown on a bootstrap sample (n draws with replacement) with
//! `mtry` candidate features sampled without replacement at every node and
//! variance-reduction splits. Everything is seeded: tree `t` derives its
//! bootstrap and split streams from `(config.seed, t)`, so the forest is
//! reproducible regardless of how many threads build it.

pub mod metrics;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::TargetKind;
use crate::matrix::Matrix;
use crate::par;
use crate::seeding;

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("label at index {index} is not finite")]
    NonFiniteLabel { index: usize },
    #[error("probe has {got} features, the forest was trained on {expected}")]
    FeatureCount { expected: usize, got: usize },
    #[error("a forest needs at least one tree")]
    NoTrees,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Maximum number of split levels; 0 turns every tree into a single leaf
    /// that predicts its bootstrap-sample mean.
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per node, clamped to the feature count at fit time.
    pub mtry: usize,
    pub seed: u64,
}

impl ForestConfig {
    /// Shipped defaults per prediction target: 30 trees for motor UPDRS, 50
    /// for total UPDRS, depth 50, leaves of at least 2, 6 of 18 features per
    /// node.
    pub fn for_target(kind: TargetKind) -> Self {
        ForestConfig {
            n_trees: match kind {
                TargetKind::Motor => 30,
                TargetKind::Total => 50,
            },
            max_depth: 50,
            min_samples_leaf: 2,
            mtry: 6,
            seed: 0,
        }
    }
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig::for_target(TargetKind::Motor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
enum Node {
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
    Leaf { value: f64, samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, probe: &[f64]) -> f64 {
        // Children are pushed before their parent, so the root sits last.
        let mut at = self.nodes.len() - 1;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    at = if probe[*feature] <= *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Forest {
    config: ForestConfig,
    n_features: usize,
    trees: Vec<Tree>,
}

/// Bootstrap index draw for tree `tree_index`: n indices sampled uniformly
/// with replacement from a stream derived from `(seed, tree_index)`. Public
/// because it is part of the reproducibility contract: recomputing this draw
/// is enough to predict what a depth-0 tree returns.
pub fn bootstrap_indices(seed: u64, tree_index: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(&[
        seed,
        seeding::TAG_TREE_BOOTSTRAP,
        tree_index as u64,
    ]));
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

impl Forest {
    /// Trains `config.n_trees` trees on `(x, y)`. Trees are independent given
    /// their derived seeds, so they may be built in parallel without changing
    /// the result.
    pub fn fit(x: &Matrix, y: &[f64], config: &ForestConfig) -> Result<Forest, ForestError> {
        if x.rows() == 0 {
            return Err(ForestError::EmptyTrainingSet);
        }
        if y.len() != x.rows() {
            return Err(ForestError::LabelCount { rows: x.rows(), labels: y.len() });
        }
        if let Some(index) = y.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::NonFiniteLabel { index });
        }
        if config.n_trees == 0 {
            return Err(ForestError::NoTrees);
        }
        let mtry = config.mtry.max(1).min(x.cols());
        let min_leaf = config.min_samples_leaf.max(1);

        let trees = par::map_range(config.n_trees, |t| {
            let indices = bootstrap_indices(config.seed, t, x.rows());
            let split_rng = ChaCha8Rng::seed_from_u64(seeding::mix(&[
                config.seed,
                seeding::TAG_TREE_SPLITS,
                t as u64,
            ]));
            grow_tree(x, y, indices, config.max_depth, min_leaf, mtry, split_rng)
        });

        Ok(Forest { config: config.clone(), n_features: x.cols(), trees })
    }

    /// Mean of the per-tree predictions, accumulated in tree order.
    pub fn predict(&self, probe: &[f64]) -> Result<f64, ForestError> {
        if probe.len() != self.n_features {
            return Err(ForestError::FeatureCount { expected: self.n_features, got: probe.len() });
        }
        let total: f64 = self.trees.iter().map(|t| t.predict(probe)).sum();
        Ok(total / self.trees.len() as f64)
    }

    /// Predicts every row of `x`.
    pub fn predict_rows(&self, x: &Matrix) -> Result<Vec<f64>, ForestError> {
        if x.cols() != self.n_features {
            return Err(ForestError::FeatureCount { expected: self.n_features, got: x.cols() });
        }
        let rows: Vec<&[f64]> = x.iter_rows().collect();
        let out = par::map_slice(&rows, |row| {
            let total: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
            total / self.trees.len() as f64
        });
        Ok(out)
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Debug dump of the tree structure. Layout is not a stability contract.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serialization cannot fail")
    }
}

/// Treat a node as constant once the summed squared deviation falls below
/// this per-row tolerance; it absorbs the float noise of summing equal
/// labels.
const ZERO_VARIANCE_EPS: f64 = 1e-12;

struct Grower<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    max_depth: usize,
    min_samples_leaf: usize,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    pairs: Vec<(f64, f64)>,
}

fn grow_tree(
    x: &Matrix,
    y: &[f64],
    indices: Vec<usize>,
    max_depth: usize,
    min_samples_leaf: usize,
    mtry: usize,
    rng: ChaCha8Rng,
) -> Tree {
    let mut grower = Grower {
        x,
        y,
        max_depth,
        min_samples_leaf,
        mtry,
        rng,
        nodes: Vec::new(),
        pairs: Vec::new(),
    };
    grower.grow(&indices, 0);
    Tree { nodes: grower.nodes }
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn grow(&mut self, indices: &[usize], depth: usize) -> u32 {
        let n = indices.len();
        let mean = indices.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let ssd: f64 = indices.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();

        let stop = depth >= self.max_depth
            || n < 2 * self.min_samples_leaf
            || ssd <= ZERO_VARIANCE_EPS * n as f64;
        if stop {
            return self.leaf(mean, n);
        }

        match self.best_split(indices, ssd) {
            None => self.leaf(mean, n),
            Some(best) => {
                let (left, right): (Vec<usize>, Vec<usize>) = indices
                    .iter()
                    .partition(|&&i| self.x.row(i)[best.feature] <= best.threshold);
                debug_assert!(!left.is_empty() && !right.is_empty());
                let left_id = self.grow(&left, depth + 1);
                let right_id = self.grow(&right, depth + 1);
                self.nodes.push(Node::Split {
                    feature: best.feature,
                    threshold: best.threshold,
                    left: left_id,
                    right: right_id,
                });
                (self.nodes.len() - 1) as u32
            }
        }
    }

    fn leaf(&mut self, value: f64, samples: usize) -> u32 {
        self.nodes.push(Node::Leaf { value, samples });
        (self.nodes.len() - 1) as u32
    }

    /// Best variance-reduction split over `mtry` sampled features. Features
    /// are scanned in ascending index order and thresholds in ascending value
    /// order with strict improvement required, so ties resolve to the lowest
    /// feature index, then the lowest threshold.
    fn best_split(&mut self, indices: &[usize], node_ssd: f64) -> Option<Candidate> {
        let n = indices.len();
        let mut features = rand::seq::index::sample(&mut self.rng, self.x.cols(), self.mtry).into_vec();
        features.sort_unstable();

        let mut best: Option<Candidate> = None;
        for feature in features {
            self.pairs.clear();
            self.pairs.extend(indices.iter().map(|&i| (self.x.row(i)[feature], self.y[i])));
            self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

            let total_sum: f64 = self.pairs.iter().map(|p| p.1).sum();
            let total_sq: f64 = self.pairs.iter().map(|p| p.1 * p.1).sum();
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for p in 1..n {
                let (value, label) = self.pairs[p - 1];
                left_sum += label;
                left_sq += label * label;
                let next = self.pairs[p].0;
                if next <= value {
                    continue;
                }
                if p < self.min_samples_leaf || n - p < self.min_samples_leaf {
                    continue;
                }
                let left_n = p as f64;
                let right_n = (n - p) as f64;
                let ssd_left = left_sq - left_sum * left_sum / left_n;
                let ssd_right = (total_sq - left_sq)
                    - (total_sum - left_sum) * (total_sum - left_sum) / right_n;
                let gain = node_ssd - ssd_left - ssd_right;
                // Strict improvement over zero and over the incumbent; a NaN
                // gain fails both comparisons and is rejected.
                let accept = match &best {
                    Some(b) => gain > b.gain,
                    None => gain > 0.0,
                };
                if !accept {
                    continue;
                }
                // Midpoint threshold; if rounding pushes it up to the right
                // value, fall back to the left one so the comparison still
                // separates exactly the first p sorted rows.
                let mut threshold = 0.5 * (value + next);
                if threshold >= next {
                    threshold = value;
                }
                best = Some(Candidate { gain, feature, threshold });
            }
        }
        best
    }
}
