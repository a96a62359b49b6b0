//! Seed derivation.
//!
//! Every random stream in a run is derived from the master seed by hashing a
//! path label (`"mbrl/january_like/task2/agent"`) with FNV-1a and mixing it
//! into the parent seed with one SplitMix64 round. Adding a new label never
//! shifts the seeds of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(parent: u64, label: &str) -> u64 {
    splitmix64(parent ^ splitmix64(fnv1a(label)))
}

pub fn rng_for(parent: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, label))
}
