//! Counter-based seed derivation.
//!
//! Child seeds depend only on the parent seed and a path of indices, so work
//! can be scheduled in any order (or in parallel) without changing results.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the node at `path` below `seed`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(seed.wrapping_add(GOLDEN)), |acc, &p| mix64(acc ^ mix64(p.wrapping_add(GOLDEN))))
}

/// Stream labels keep unrelated uses of one master seed apart.
pub mod stream {
    pub const WORLD: u64 = 1;
    pub const QUESTIONS: u64 = 2;
    pub const SHARDS: u64 = 3;
    pub const BASE: u64 = 4;
    pub const RL: u64 = 5;
    pub const SFT: u64 = 6;
    pub const EVAL: u64 = 7;
}
