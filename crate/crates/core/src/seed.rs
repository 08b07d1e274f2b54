//! Stable seed derivation. Every random stream in the crate is a ChaCha
//! generator keyed by a base seed mixed with a stream label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn stream labels into integers.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, p| splitmix64(acc ^ splitmix64(*p)))
}

pub fn derive_str(base: u64, label: &str, index: u64) -> u64 {
    derive(base, &[hash_str(label), index])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform [0, 1) from a coordinate hash; used for static textures.
pub fn unit_hash(seed: u64, a: i64, b: i64, c: u64) -> f32 {
    let h = derive(seed, &[a as u64, b as u64, c]);
    (h >> 40) as f32 / (1u64 << 24) as f32
}
