//! Seed derivation.
//!
//! Every random stream in the lab is a ChaCha8 generator whose seed is derived
//! from the run seed and a stream label, so independent parts of a scenario
//! (colors, supports, per-task sampling) never share state and can be built in
//! any order or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

/// Stream labels for [`derive_seed`].
pub mod stream {
    pub const COLORS: u64 = 0x636f_6c6f_7273;
    pub const MODES: u64 = 0x6d6f_6465_73;
    pub const PATTERNS: u64 = 0x7061_7474;
    pub const SPLIT: u64 = 0x7370_6c69_74;
    pub const TASK: u64 = 0x7461_736b;
    pub const TEST: u64 = 0x7465_7374;
    pub const INIT: u64 = 0x696e_6974;
    pub const TRAIN: u64 = 0x7472_6169_6e;
    pub const BUFFER: u64 = 0x6275_6666;
    pub const PROJECTION: u64 = 0x7072_6f6a;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `seed` with a stream label and an index into a fresh 64-bit seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ index)
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> LabRng {
    LabRng::seed_from_u64(derive_seed(seed, stream, index))
}
