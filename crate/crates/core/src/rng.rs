//! Seed derivation. Every random stream in the simulator is an explicit
//! `ChaCha8Rng` derived from a master seed and a stream tag, so components
//! never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// splitmix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(seed ^ mix(stream.wrapping_add(0x5151)))
}

pub fn stream(seed: u64, stream: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, stream))
}

/// Well-known stream tags.
pub mod tags {
    pub const MACRO_SITES: u64 = 1;
    pub const PICOS: u64 = 2;
    pub const UES: u64 = 3;
    pub const SHADOW: u64 = 4;
    pub const TYPICAL_UES: u64 = 5;
    pub const PROBES: u64 = 6;
    pub const MEANFIELD: u64 = 10;
    pub const BETA: u64 = 11;
    pub const ETA: u64 = 12;
    pub const LOCNET_DATA: u64 = 20;
    pub const LOCNET_INIT: u64 = 21;
    pub const ONLINE: u64 = 30;
    pub const EVAL: u64 = 31;
    pub const STABILITY: u64 = 32;
    pub const LOCALIZE: u64 = 33;
    pub const LOCALIZE_TEST: u64 = 34;
}
