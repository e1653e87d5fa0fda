//! Deterministic random number streams.
//!
//! Every run derives all of its randomness from a single session seed.
//! Independent operations (dataset generation, training splits, tracking)
//! get their own ChaCha stream keyed by a tag, so adding draws to one
//! operation never perturbs another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Real;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive an independent, reproducible stream from a session seed and a tag.
pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(tag)))
}

/// Derive a per-index substream (e.g. one stream per Monte Carlo trial).
pub fn substream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(tag) ^ splitmix64(index)))
}

/// Standard normal draw in the generic scalar type.
///
/// Draws are made in f64 and narrowed, so f32 and f64 sessions consume the
/// underlying stream identically.
pub fn std_normal<T: Real, R: Rng>(rng: &mut R) -> T {
    let v: f64 = rng.sample(rand_distr::StandardNormal);
    crate::real(v)
}

/// Uniform draw in [0, 1).
pub fn unit_uniform<T: Real, R: Rng>(rng: &mut R) -> T {
    let v: f64 = rng.gen::<f64>();
    crate::real(v)
}
