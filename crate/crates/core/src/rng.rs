//! Seed handling. Every random draw in the crate flows from one explicit 64-bit seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of the SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `index` from `base`.
///
/// `derive_seed(base, i) = splitmix64(splitmix64(base) + (i + 1) * GOLDEN_GAMMA)`.
/// The inner mix decorrelates nearby base seeds; the outer one is a bijection in
/// `i` for a fixed base, so distinct indices never collide.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base).wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A generator for sub-stream `index` of `base`.
pub fn stream(base: u64, index: u64) -> Rng {
    rng_from_seed(derive_seed(base, index))
}
