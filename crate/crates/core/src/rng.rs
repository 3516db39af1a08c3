//! Counter-based random streams keyed by `(seed, replicate)` and
//! `(tree seed, label)`, so draws do not depend on traversal order or
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::label::Label;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer applied to `seed ^ x`.
pub fn mix(seed: u64, x: u64) -> u64 {
    let mut z = seed ^ x.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replicate_seed(seed: u64, replicate: u64) -> u64 {
    mix(mix(seed, 0x5eed), replicate)
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn label_key(tree_seed: u64, label: &Label) -> u64 {
    let mut h = mix(tree_seed, label.generation() as u64);
    for &k in label.path() {
        h = mix(h, u64::from(k));
    }
    h
}

pub fn branch_stream(tree_seed: u64, label: &Label) -> StreamRng {
    stream(label_key(tree_seed, label))
}
