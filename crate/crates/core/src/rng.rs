//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by
//! `(seed, stream)`, so a sample's values do not depend on which thread or in
//! which order it was generated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream ids reserved by the library.
pub mod streams {
    pub const KLE_THETA: u64 = 1;
    pub const FORCING_NOISE: u64 = 2;
    pub const PROJECTION_VECTORS: u64 = 3;
    pub const PARAM_INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` standard normal draws from stream `(seed, stream_id)`.
pub fn normals(seed: u64, stream_id: u64, n: usize) -> Vec<f64> {
    let mut rng = stream(seed, stream_id);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Mix two words into a derived seed (splitmix64 finalizer).
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
