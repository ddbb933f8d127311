//! Seed derivation and the PRNG used throughout the crate.
//!
//! Every stochastic component owns a [`Rng`] (ChaCha8, whose output stream is
//! fixed by its algorithm and independent of the platform). Sub-seeds are
//! derived from one root seed with [`derive_seed`], a SplitMix64 finaliser
//! applied to the root seed and a stream index, so the seed of worker or
//! episode `i` never depends on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keeping independent consumers of one root seed apart.
pub mod stream {
    pub const ENV: u64 = 0x454e_5600;
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const ACTION: u64 = 0x4143_544e;
    pub const EPISODE: u64 = 0x4550_4953;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `seed_i = splitmix64(splitmix64(root) ^ index)`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root) ^ index)
}

/// Seed for the `index`-th member of a tagged stream.
pub fn derive_stream_seed(root: u64, tag: u64, index: u64) -> u64 {
    derive_seed(derive_seed(root, tag), index)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
