//! Seed derivation.
//!
//! Every stochastic step (a k-means restart, the candidate pool of one sample,
//! one Monte-Carlo trial) draws from its own generator seeded by mixing the run
//! seed with a stream tag and an index. Results therefore do not depend on how
//! rayon schedules the work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub(crate) mod stream {
    pub const KMEANS: u64 = 0x6b6d;
    pub const PAIRS: u64 = 0x7061;
    pub const ABLATION: u64 = 0x6162;
    pub const SYNTH: u64 = 0x7379;
    pub const TRIAL: u64 = 0x7472;
    pub const METRICS: u64 = 0x6d65;
    pub const VERIFY: u64 = 0x7665;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `seed`, a stream tag and an index into a new 64-bit seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ index)
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, index))
}
