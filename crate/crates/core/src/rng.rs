//! Deterministic RNG streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] seeded through
//! [`stream`], so a run is a pure function of (seed, tag, index). Training
//! derives a fresh stream per step, which makes resumed runs bit-identical
//! to unbroken ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for byte in tag.as_bytes() {
        h ^= *byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Standard normal draw via Box-Muller.
pub fn gaussian(rng: &mut impl rand::Rng) -> f64 {
    // Open01 keeps u1 away from 0 so the log stays finite
    let u1: f64 = rng.sample(rand::distributions::Open01);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// RNG stream for (seed, tag, index), stable across runs and platforms.
pub fn stream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ fnv1a(tag).rotate_left(17) ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
