//! Seeding helpers. Every stochastic component owns its own ChaCha stream
//! derived from a master seed and a tag, so results do not depend on the
//! order in which parallel workers run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a seed with a sequence of tags (splitmix64 finalizer per step).
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &t in tags {
        x = mix(x ^ mix(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    mix(x)
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw from the closed range `[lo, hi]`.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}
