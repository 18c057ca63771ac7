//! Counter-based random streams.
//!
//! Every random draw is addressed by `(seed, stream)`: ChaCha8 keyed by the
//! seed, with the ChaCha stream id selecting an independent sequence. Paths in
//! an ensemble get their own seed via [`path_seed`], so generating path `i`
//! never depends on how many other paths were drawn or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers. Jump streams are separate from the Gaussian stream so
/// refining the time grid leaves the jump record untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Gaussian = 1,
    Bridge = 2,
    LargeJumps = 3,
    SmallJumps = 4,
    Surrogate = 5,
    Auxiliary = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    stream_rng_raw(seed, stream as u64)
}

pub fn stream_rng_raw(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `index` in the ensemble keyed by `master`.
pub fn path_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}
