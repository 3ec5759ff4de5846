//! Seed derivation.
//!
//! Every random stream in the toolkit comes from one global seed combined
//! with a purpose tag, so a single knob reproduces a whole experiment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Purpose tags mixed into the global seed.
pub mod purpose {
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const PERTURB: u64 = 0x5045_5254;
    pub const EMBED_INIT: u64 = 0x454d_4244;
    pub const HEAD_INIT: u64 = 0x4845_4144;
    pub const DICTIONARY: u64 = 0x4449_4354;
    pub const SYNTHETIC: u64 = 0x5359_4e54;
}

/// 64-bit FNV-1a over raw bytes; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `seed ⊕ tag`, passed through a mixer so nearby tags give unrelated streams.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator keyed by a string, e.g. one stream per vocabulary word.
pub fn keyed_rng(seed: u64, key: &str) -> SeededRng {
    rng(derive(seed, fnv1a(key.as_bytes())))
}
