//! Deterministic seed derivation.
//!
//! Every random stream in the crate is seeded through [`mix`], a splitmix64
//! chain over (base seed, stage tag, identifiers). Derived seeds depend only
//! on their inputs, never on thread scheduling, so parallel and sequential
//! builds draw identical streams.

pub(crate) const TAG_SPLIT: u64 = 1;
pub(crate) const TAG_TREE_BOOTSTRAP: u64 = 2;
pub(crate) const TAG_TREE_SPLITS: u64 = 3;
pub(crate) const TAG_STAGE_RANK: u64 = 4;
pub(crate) const TAG_STAGE_PAYOFF: u64 = 5;
pub(crate) const TAG_STAGE_FAMILY: u64 = 6;
pub(crate) const TAG_STAGE_FINAL: u64 = 7;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Folds `parts` into one 64-bit seed. Order-sensitive: `mix(&[a, b])` and
/// `mix(&[b, a])` differ.
pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}
