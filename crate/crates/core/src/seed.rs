//! Named sub-seeds derived from one master seed.
//!
//! Every random choice in the crate draws from a [`ChaCha8Rng`] seeded by
//! `derive(master, name)`, so adding a new consumer never shifts the streams of
//! existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Derives a stable sub-seed for the stream called `name`.
pub fn derive(master: u64, name: &str) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a(name.as_bytes())))
}

pub fn rng(master: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, name))
}
