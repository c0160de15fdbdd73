//! Cooperative-game machinery: exact Shapley values over small player sets,
//! a sampled-coalition estimator for large ones, and the squash/normalise
//! maps that turn raw values into transfer weights.
//!
//! Payoffs are loss-like (lower is better), pure, and memoized per distinct
//! coalition. A brute-force permutation evaluator is included as a test
//! oracle.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::par;

/// Player set limit for exact enumeration (2^n payoff evaluations).
pub const EXACT_PLAYER_LIMIT: usize = 20;
/// Player set limit for the factorial test oracle.
pub const BRUTE_FORCE_PLAYER_LIMIT: usize = 10;
/// Player set limit for exhaustive coalition families.
pub const EXHAUSTIVE_FAMILY_LIMIT: usize = 14;

#[derive(Debug, Error, PartialEq)]
pub enum ShapleyError {
    #[error("{players} players exceed the limit of {limit} for {operation}")]
    CapacityExceeded { players: usize, limit: usize, operation: &'static str },
    #[error("payoff returned a non-finite value for coalition {coalition:?}")]
    NonFinitePayoff { coalition: Vec<usize> },
    #[error("coalition family is empty")]
    EmptyFamily,
    #[error("player {player} is outside the game of {players} players")]
    PlayerOutOfRange { player: usize, players: usize },
    #[error("weight {value} at index {index} is not a positive finite number")]
    NonPositiveWeight { index: usize, value: f64 },
}

type PayoffFn<'a> = Box<dyn Fn(&[usize]) -> f64 + Send + Sync + 'a>;

/// A cooperative game with players `0..n_players` and a memoized payoff.
///
/// Coalitions are sorted, duplicate-free index slices. The payoff must be
/// pure (same coalition, same value) and must not call back into the game.
pub struct Game<'a> {
    n_players: usize,
    payoff: PayoffFn<'a>,
    memo: Mutex<HashMap<Vec<usize>, f64>>,
    evaluations: AtomicUsize,
}

impl<'a> Game<'a> {
    pub fn new<F>(n_players: usize, payoff: F) -> Self
    where
        F: Fn(&[usize]) -> f64 + Send + Sync + 'a,
    {
        Game {
            n_players,
            payoff: Box::new(payoff),
            memo: Mutex::new(HashMap::new()),
            evaluations: AtomicUsize::new(0),
        }
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    /// Memoized payoff lookup. The payoff runs under the memo lock, so each
    /// distinct coalition is evaluated at most once even under concurrent
    /// callers; batch workloads should go through [`Game::prime`] instead so
    /// evaluations run in parallel.
    pub fn eval(&self, coalition: &[usize]) -> f64 {
        debug_assert!(coalition.windows(2).all(|w| w[0] < w[1]), "coalitions are sorted sets");
        let mut memo = self.memo.lock().expect("game memo poisoned");
        if let Some(&v) = memo.get(coalition) {
            return v;
        }
        let v = (self.payoff)(coalition);
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        memo.insert(coalition.to_vec(), v);
        v
    }

    /// Evaluates every distinct, not-yet-cached coalition in `coalitions`
    /// once, in parallel, then stores the results.
    pub fn prime(&self, coalitions: &[Vec<usize>]) {
        let missing: Vec<&Vec<usize>> = {
            let memo = self.memo.lock().expect("game memo poisoned");
            let mut seen: HashSet<&Vec<usize>> = HashSet::new();
            coalitions
                .iter()
                .filter(|c| !memo.contains_key(*c) && seen.insert(*c))
                .collect()
        };
        if missing.is_empty() {
            return;
        }
        let values = par::map_slice(&missing, |c| (self.payoff)(c.as_slice()));
        self.evaluations.fetch_add(values.len(), Ordering::Relaxed);
        let mut memo = self.memo.lock().expect("game memo poisoned");
        for (c, v) in missing.into_iter().zip(values) {
            memo.insert(c.clone(), v);
        }
    }

    /// Number of payoff evaluations so far (memo hits excluded).
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }
}

fn mask_to_coalition(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|i| mask & (1 << i) != 0).collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Exact Shapley values by full coalition enumeration.
///
/// phi_i = sum over S not containing i of
///         |S|! (n-|S|-1)! / n! * (payoff(S + i) - payoff(S)).
///
/// Payoffs for all 2^n coalitions are computed first (in parallel, each
/// exactly once); the weighted sum then runs in a fixed order so the result
/// does not depend on the thread count.
pub fn exact_shapley(game: &Game) -> Result<Vec<f64>, ShapleyError> {
    let n = game.n_players();
    if n > EXACT_PLAYER_LIMIT {
        return Err(ShapleyError::CapacityExceeded {
            players: n,
            limit: EXACT_PLAYER_LIMIT,
            operation: "exact enumeration",
        });
    }
    let full = 1u32 << n;
    let coalitions: Vec<Vec<usize>> = (0..full).map(|m| mask_to_coalition(m, n)).collect();
    game.prime(&coalitions);

    let mut table = Vec::with_capacity(full as usize);
    for c in &coalitions {
        let v = game.eval(c);
        if !v.is_finite() {
            return Err(ShapleyError::NonFinitePayoff { coalition: c.clone() });
        }
        table.push(v);
    }

    let weights: Vec<f64> = (0..n).map(|s| 1.0 / (n as f64 * binomial(n - 1, s))).collect();
    let mut phi = vec![0.0; n];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for mask in 0..full {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            *phi_i += weights[s] * (table[(mask | bit) as usize] - table[mask as usize]);
        }
    }
    Ok(phi)
}

/// Permutation-averaged Shapley values: the textbook definition, kept as an
/// independent oracle for tests. Factorial cost, so the player limit is low.
pub fn brute_force_shapley(game: &Game) -> Result<Vec<f64>, ShapleyError> {
    let n = game.n_players();
    if n > BRUTE_FORCE_PLAYER_LIMIT {
        return Err(ShapleyError::CapacityExceeded {
            players: n,
            limit: BRUTE_FORCE_PLAYER_LIMIT,
            operation: "permutation enumeration",
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut acc = vec![0.0; n];
    let mut permutations = 0u64;
    permute(&mut order, 0, &mut |perm| {
        permutations += 1;
        let mut coalition: Vec<usize> = Vec::with_capacity(n);
        let mut before = game.eval(&coalition);
        for &p in perm {
            let at = coalition.partition_point(|&q| q < p);
            coalition.insert(at, p);
            let after = game.eval(&coalition);
            acc[p] += after - before;
            before = after;
        }
    });
    for v in &mut acc {
        *v /= permutations as f64;
        if !v.is_finite() {
            return Err(ShapleyError::NonFinitePayoff { coalition: vec![] });
        }
    }
    Ok(acc)
}

fn permute(order: &mut Vec<usize>, at: usize, visit: &mut impl FnMut(&[usize])) {
    if at == order.len() {
        visit(order);
        return;
    }
    for i in at..order.len() {
        order.swap(at, i);
        permute(order, at + 1, visit);
        order.swap(at, i);
    }
}

/// Maps a raw Shapley value into (0, 1), reversing its order: strongly
/// negative values (big loss reductions) approach 1, strongly positive ones
/// approach 0, and zero maps to exactly 0.5.
pub fn squash(phi: f64) -> f64 {
    let v = if phi >= 0.0 {
        let e = (-phi).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + phi.exp())
    };
    // exp can underflow to zero for huge inputs; keep the output positive so
    // downstream normalisation stays defined.
    v.max(f64::MIN_POSITIVE)
}

/// Scales positive weights to sum to 1.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>, ShapleyError> {
    for (index, &value) in weights.iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(ShapleyError::NonPositiveWeight { index, value });
        }
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Raw Shapley values with their squashed and normalised forms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapleyVector {
    pub phi: Vec<f64>,
    pub phi_pos: Vec<f64>,
    pub psi: Vec<f64>,
}

impl ShapleyVector {
    pub fn from_phi(phi: Vec<f64>) -> Result<Self, ShapleyError> {
        if let Some(index) = phi.iter().position(|v| !v.is_finite()) {
            return Err(ShapleyError::NonPositiveWeight { index, value: phi[index] });
        }
        let phi_pos: Vec<f64> = phi.iter().map(|&v| squash(v)).collect();
        let psi = normalize_weights(&phi_pos)?;
        Ok(ShapleyVector { phi, phi_pos, psi })
    }
}

/// How a coalition family was generated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FamilyPolicy {
    /// Every subset of the player set.
    Exhaustive,
    /// `count` independent draws: pick a size uniformly from 0..=m, then a
    /// uniform subset of that size. Duplicates are permitted; the estimator
    /// weights by multiplicity.
    Sampled { count: usize, seed: u64 },
}

/// A list of coalitions over players `0..m` used by the sampled estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionFamily {
    pub coalitions: Vec<Vec<usize>>,
    pub generation: FamilyPolicy,
}

/// Builds a coalition family over `m` players.
pub fn build_family(m: usize, policy: FamilyPolicy) -> Result<CoalitionFamily, ShapleyError> {
    let coalitions = match policy {
        FamilyPolicy::Exhaustive => {
            if m > EXHAUSTIVE_FAMILY_LIMIT {
                return Err(ShapleyError::CapacityExceeded {
                    players: m,
                    limit: EXHAUSTIVE_FAMILY_LIMIT,
                    operation: "exhaustive family",
                });
            }
            (0..(1u32 << m)).map(|mask| mask_to_coalition(mask, m)).collect()
        }
        FamilyPolicy::Sampled { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut coalitions = Vec::with_capacity(count);
            for _ in 0..count {
                let size = rng.gen_range(0..=m);
                let mut ids = rand::seq::index::sample(&mut rng, m, size).into_vec();
                ids.sort_unstable();
                coalitions.push(ids);
            }
            coalitions
        }
    };
    Ok(CoalitionFamily { coalitions, generation: policy })
}

/// Sampled-coalition Shapley estimate: for player `j`, the mean of
/// `payoff(C) / |C|` over the family coalitions that contain `j` (counting
/// multiplicity). Over an exhaustive family this is the uniform-division
/// attribution sum scaled by the constant 2^(m-1), so orderings and signs
/// match the unscaled sum exactly.
///
/// Players that appear in no coalition get `None`: the caller decides what a
/// missing score means, rather than this function inventing one.
pub fn simplified_shapley(
    game: &Game,
    family: &CoalitionFamily,
) -> Result<Vec<Option<f64>>, ShapleyError> {
    let n = game.n_players();
    if family.coalitions.is_empty() {
        return Err(ShapleyError::EmptyFamily);
    }
    for c in &family.coalitions {
        if let Some(&p) = c.iter().find(|&&p| p >= n) {
            return Err(ShapleyError::PlayerOutOfRange { player: p, players: n });
        }
    }
    game.prime(&family.coalitions);
    let mut values = Vec::with_capacity(family.coalitions.len());
    for c in &family.coalitions {
        let v = game.eval(c);
        if !v.is_finite() {
            return Err(ShapleyError::NonFinitePayoff { coalition: c.clone() });
        }
        values.push(v);
    }

    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (c, &v) in family.coalitions.iter().zip(&values) {
        let share = v / c.len() as f64;
        for &p in c {
            sums[p] += share;
            counts[p] += 1;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| if c > 0 { Some(s / c as f64) } else { None })
        .collect())
}
