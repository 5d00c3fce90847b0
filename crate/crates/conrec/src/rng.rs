//! Seed derivation.
//!
//! Every random decision in the crate draws from a ChaCha8 stream whose seed is
//! derived functionally from a base seed and a tag path. Nothing carries hidden
//! RNG state between steps, so any point of a run can be reproduced from
//! (config, seed) alone and generation order never matters.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, cheap.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from `base` and a tag path.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    let mut s = mix(base ^ 0x5851_f42d_4c95_7f2d);
    for &t in tags {
        s = mix(s ^ mix(t));
    }
    s
}

/// FNV-1a over bytes, used to turn names into tags and to digest configs.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A deterministic random stream for the given seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
