//! Seed derivation for independent, order-stable random sub-streams.

/// SplitMix64 finalizer.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Derives a child seed from a master seed and a stream tag.
pub fn mix_seed(master: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(tag))
}

/// Derives a child seed from a master seed and two indices, so per-cell
/// streams are independent and stable under reordering of other cells.
pub fn mix_seed2(master: u64, a: u64, b: u64) -> u64 {
    mix_seed(mix_seed(master, a), b)
}
