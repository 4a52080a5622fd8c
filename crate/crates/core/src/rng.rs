//! Named, reproducible random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(seed, tag, index)`. Components that run in parallel or out of order
//! therefore never share or reorder draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_SPLIT: &str = "split";
pub const TAG_INIT: &str = "init";
pub const TAG_AUGMENT: &str = "augment";
pub const TAG_EVAL: &str = "eval";
pub const TAG_SYNTH: &str = "synth";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// FNV-1a, stable across platforms and compiler versions.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives a child seed from a parent seed, a purpose tag and an index.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ tag_hash(tag)) ^ splitmix64(index.wrapping_add(0x51_7CC1_B727_220A)))
}

pub fn substream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
