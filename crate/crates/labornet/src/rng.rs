//! Deterministic seed derivation.
//!
//! All randomness in the crate flows from a single root seed. Named
//! sub-streams are derived by hashing the root seed together with a
//! component label, a purpose label, and an index, so that parallel and
//! serial runs draw identical values regardless of scheduling.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// SplitMix64 step; used as the mixing function for stream derivation.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit stream seed from a root seed and a named path.
pub fn derive_seed(root: u64, component: &str, purpose: &str, index: u64) -> u64 {
    let mut state = root;
    let mut out = splitmix64(&mut state);
    for part in [component.as_bytes(), purpose.as_bytes()] {
        for &b in part {
            state ^= u64::from(b);
            out ^= splitmix64(&mut state);
        }
        state ^= 0xff;
        out ^= splitmix64(&mut state);
    }
    state ^= index;
    out ^ splitmix64(&mut state)
}

/// Builds the generator for a named sub-stream.
pub fn stream_rng(root: u64, component: &str, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, component, purpose, index))
}
