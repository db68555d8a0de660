//! Counter-based seed derivation.
//!
//! Every random stream (a Monte Carlo replication, a bootstrap draw) gets its
//! own seed computed from `(master, stream, index)`, so results do not depend
//! on the order or the thread in which the streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix(mix(mix(master) ^ stream) ^ index)
}

pub fn rng_for(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}

/// Stream identifiers, kept distinct so that no two uses of one master seed
/// share random numbers.
pub mod streams {
    pub const BOOTSTRAP: u64 = 1;
    pub const REPLICATION: u64 = 2;
    pub const DGP_ATTEMPT: u64 = 3;
}
