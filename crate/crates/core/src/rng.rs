//! Counter-based random bits.
//!
//! Every draw is a pure function of `(seed, row, column)`, so a mask matrix
//! can be generated in any order, or in parallel, with identical results.

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// 64 random bits addressed by `(seed, i, j)`.
#[inline]
pub fn counter_u64(seed: u64, i: u64, j: u64) -> u64 {
    let a = mix64(seed.wrapping_add(GOLDEN));
    let b = mix64(a ^ i.wrapping_mul(GOLDEN).wrapping_add(0x632b_e59b_d9b4_e019));
    mix64(b ^ j.wrapping_mul(0xd6e8_feb8_6659_fd93).wrapping_add(GOLDEN))
}

/// Fair coin addressed by `(seed, i, j)`.
#[inline]
pub fn counter_bit(seed: u64, i: u64, j: u64) -> bool {
    counter_u64(seed, i, j) >> 63 == 1
}

/// Uniform in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn counter_unit(seed: u64, i: u64, j: u64) -> f64 {
    (counter_u64(seed, i, j) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives an independent seed for sub-stream `k` (e.g. one per repetition).
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    counter_u64(seed, u64::MAX, k)
}
