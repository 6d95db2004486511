//! Seeded random streams.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng`, which produces the
//! same stream on every platform for a given seed. Sub-tasks that may run in
//! parallel derive their own seed from the parent seed and a tag tuple, so
//! results never depend on scheduling.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with a list of tags into an independent child seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `amount` distinct indices from `0..len`, uniformly without replacement.
pub fn sample_without_replacement(rng: &mut Rng, len: usize, amount: usize) -> Vec<usize> {
    let amount = amount.min(len);
    index::sample(rng, len, amount).into_vec()
}

/// Up to `amount` indices from `0..len` that are not in `exclude`, uniformly
/// without replacement.
pub fn sample_excluding(rng: &mut Rng, len: usize, amount: usize, exclude: &[usize]) -> Vec<usize> {
    let mut taken = vec![false; len];
    for &e in exclude {
        if e < len {
            taken[e] = true;
        }
    }
    let pool: Vec<usize> = (0..len).filter(|&i| !taken[i]).collect();
    sample_without_replacement(rng, pool.len(), amount)
        .into_iter()
        .map(|p| pool[p])
        .collect()
}

/// Appends fresh uniform indices from `0..len` to `base` (after removing
/// duplicates, order of first occurrence kept) until it reaches `target` or
/// exhausts the range.
pub fn dedup_and_pad(rng: &mut Rng, mut base: Vec<usize>, len: usize, target: usize) -> Vec<usize> {
    let mut seen = vec![false; len];
    base.retain(|&i| !std::mem::replace(&mut seen[i], true));
    if base.len() < target {
        let extra = sample_excluding(rng, len, target - base.len(), &base);
        base.extend(extra);
    }
    base
}
