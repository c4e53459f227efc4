//! Seed stream splitting.
//!
//! A run has one root seed. Every consumer of randomness (weight init, OOV
//! vectors, shuffling, each regularizer) draws from its own ChaCha8 stream whose
//! seed is `mix(root, fnv1a(label), i0, i1, ...)`. The label strings below are
//! part of the reproducibility contract: renaming one changes its stream and
//! nothing else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: &str = "init";
pub const STREAM_OOV: &str = "oov";
pub const STREAM_SHUFFLE: &str = "shuffle";
pub const STREAM_SPATIAL_DROPOUT: &str = "spatial_dropout";
pub const STREAM_DROPOUT: &str = "dropout";
pub const STREAM_WEIGHT_NOISE: &str = "weight_noise";

fn fnv1a(label: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    for byte in label.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the 64-bit seed of stream `label` at position `indices`.
pub fn derive_seed(root: u64, label: &str, indices: &[u64]) -> u64 {
    let mut state = splitmix64(root ^ fnv1a(label));
    for &i in indices {
        state = splitmix64(state ^ splitmix64(i));
    }
    state
}

pub fn stream(root: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, indices))
}
