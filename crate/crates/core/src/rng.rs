//! Named, seeded random streams.
//!
//! Every random quantity in a run descends from one top-level seed. A stream
//! is addressed by a label (`"campaign"`, `"training"`, `"noise"`, ...) and a
//! list of integer indices, so results never depend on the order in which
//! samples are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derive a child seed from a parent seed, a label and a path of indices.
pub fn derive_seed(seed: u64, label: &str, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ fnv1a(label));
    for &p in path {
        h = splitmix64(h ^ p.wrapping_mul(GOLDEN_GAMMA));
    }
    h
}

/// A ChaCha8 generator for the stream `(seed, label, path)`.
pub fn stream(seed: u64, label: &str, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label, path))
}
