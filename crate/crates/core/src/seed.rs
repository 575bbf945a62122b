//! Seed fan-out.
//!
//! A single global seed is split into independent child seeds by hashing the
//! parent together with a stream label through SplitMix64. Children for
//! different labels are decorrelated, and the rule is stable across runs, so
//! any stage can be re-run in isolation with the seed it saw originally.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `stream` under `parent`.
pub fn derive(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Child seed for a named stream (e.g. `"population"`, `"train"`).
pub fn derive_named(parent: u64, name: &str) -> u64 {
    // FNV-1a over the label, then the numeric rule.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    derive(parent, h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
