//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is keyed by a tuple of integers
//! (master seed, realization id, stream tag, ...) so that results do not
//! depend on execution order or on how work is spread across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used when deriving per-realization seeds.
pub mod tag {
    pub const POOL: u64 = 0x706f_6f6c;
    pub const QUERY: u64 = 0x7175_6572;
    pub const NOISY: u64 = 0x6e6f_6973;
    pub const LABEL: u64 = 0x6c61_6265;
    pub const MODEL: u64 = 0x6d6f_6465;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `parts` into `master` one word at a time.
pub fn derive(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, parts: &[u64]) -> Rng {
    rng(derive(master, parts))
}
