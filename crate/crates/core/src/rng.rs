//! Deterministic seed derivation.
//!
//! Everything random in the crate draws from ChaCha8 streams seeded through
//! [`derive_seed`], so any unit of work (a sample, an epoch, a candidate)
//! gets its own stream that does not depend on execution order or thread
//! count.

/// SplitMix64 step — cheap, well-mixed, and stable across platforms.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a root seed and a path of tags (stage, epoch, index, ...) into one
/// well-mixed 64-bit seed.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(root ^ 0x6A09_E667_F3BC_C909);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t));
    }
    state
}
