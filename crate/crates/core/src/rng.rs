//! Deterministic RNG substream derivation.
//!
//! Every random draw in the crate flows from a `ChaCha8Rng` seeded through
//! [`substream`], so runs are reproducible from a single root seed and
//! independent components (episodes, environments, fits) never share a
//! stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby seed/tag combinations.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent RNG from a root seed and a path of tags
/// (e.g. `[epoch, episode]`).
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = mix(seed);
    for &t in tags {
        state = mix(state ^ mix(t));
    }
    ChaCha8Rng::seed_from_u64(state)
}
