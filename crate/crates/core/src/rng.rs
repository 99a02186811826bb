//! Seed derivation for per-patch and per-step random streams.
//!
//! Every stochastic draw in the pipeline comes from a `ChaCha8Rng` whose seed
//! is a pure function of the global seed and a stable identifier, so results
//! do not depend on iteration order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::schedule::Latent;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// FNV-1a over bytes; stable across platforms and toolchains.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Folds a sequence of words into one seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn rng_from(base: u64, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, parts))
}

/// Stream for one patch reconstruction.
pub fn patch_rng(seed: u64, slide_id: &str, row: usize, col: usize, repeat: usize) -> Rng {
    rng_from(seed, &[hash_str(slide_id), row as u64, col as u64, repeat as u64])
}

pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_latent<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Latent {
    Latent::new((0..dim).map(|_| standard_normal(rng)).collect())
}
