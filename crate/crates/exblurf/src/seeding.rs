//! Deterministic derivation of per-purpose RNG streams from one master
//! seed, so every consumer (trajectory draws, epoch shuffles) is stable
//! under resume and independent of thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_TRAJECTORY: u64 = 1;
pub const TAG_EPOCH: u64 = 2;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tag: u64, idx: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(tag)).wrapping_add(idx))
}

pub fn rng_for(master: u64, tag: u64, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, idx))
}
