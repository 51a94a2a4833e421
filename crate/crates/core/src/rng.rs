//! Deterministic random number generation.
//!
//! Every stochastic step (sampling, augmentation, dropout, initialization,
//! shuffling) draws from [`RngState`], which is ChaCha with 8 rounds as
//! implemented by `rand_chacha`. Its output stream is fixed by the ChaCha
//! specification and does not depend on platform or endianness. Seeds are
//! expanded with `SeedableRng::seed_from_u64` (a PCG32 stream, fixed by
//! `rand_core`).
//!
//! Independent streams are derived from a base seed with [`derive_seed`],
//! a SplitMix64 finalizer over `base ^ (index * 0x9E3779B97F4A7C15)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RngState = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> RngState {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th independent stream under `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Seed for a stream keyed by several indices, e.g. `(epoch, batch)`.
pub fn derive_seed_path(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(base, |s, &i| derive_seed(s, i))
}
