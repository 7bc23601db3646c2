//! Reproducible randomness.
//!
//! Every random draw in the crate comes from SplitMix64 (Vigna's reference
//! `splitmix64.c`), seeded explicitly. Independent streams are derived by
//! folding a key path into the seed, so a rollout's draws depend only on
//! `(seed, iteration, rollout)` and never on scheduling. Helpers here use
//! simple, portable reductions so the same sequences can be regenerated in
//! other languages:
//!
//! * uniform `f64`: top 53 bits of `next_u64` times `2^-53`
//! * bounded integer in `[0, n)`: high 64 bits of `next_u64 * n`

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
pub use rand_xoshiro::SplitMix64;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// The SplitMix64 output finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// A child stream for `seed` addressed by `path` (e.g. `[iteration, rollout]`).
pub fn stream(seed: u64, path: &[u64]) -> SplitMix64 {
    let state = path.iter().fold(mix(seed), |acc, &k| {
        mix(acc ^ mix(k.wrapping_add(GOLDEN)))
    });
    SplitMix64::seed_from_u64(state)
}

pub fn uniform<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Integer in `[0, n)`. `n` must be positive.
pub fn below<R: RngCore>(rng: &mut R, n: usize) -> usize {
    debug_assert!(n > 0);
    ((u128::from(rng.next_u64()) * n as u128) >> 64) as usize
}

/// Integer in `[lo, hi]`.
pub fn between<R: RngCore>(rng: &mut R, lo: i64, hi: i64) -> i64 {
    debug_assert!(lo <= hi);
    lo + below(rng, (hi - lo + 1) as usize) as i64
}

/// Fisher-Yates, walking from the back.
pub fn shuffle<R: RngCore, T>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// Index drawn from a discrete distribution by inverse CDF.
pub fn categorical<R: RngCore>(rng: &mut R, probs: &[f64]) -> usize {
    let u = uniform(rng);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left the tail short of 1; fall back to the last supported index.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
