//! Deterministic derivation of sub-seeds from one run seed.

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for stream `tag` at counter `n`.
pub fn derive(seed: u64, tag: u64, n: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(tag)).wrapping_add(n))
}

pub const TAG_SHUFFLE: u64 = 1;
pub const TAG_DROPOUT: u64 = 2;
pub const TAG_INIT: u64 = 3;
pub const TAG_KGE: u64 = 4;
pub const TAG_CALIBRATE: u64 = 5;
pub const TAG_DATA: u64 = 6;
