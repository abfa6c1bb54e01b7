//! Seed derivation.
//!
//! A run has one root seed. Every consumer of randomness asks for a named
//! substream, so adding a new consumer never shifts the draws of an existing
//! one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed, a label and integer coordinates.
pub fn derive(seed: u64, label: &str, coords: &[u64]) -> u64 {
    let mut h = splitmix(seed);
    for b in label.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    // separator so ("ab", [1]) and ("a", [..]) never collide by construction
    h = splitmix(h ^ 0xFF);
    for &c in coords {
        h = splitmix(h ^ c);
    }
    h
}

pub fn stream(seed: u64, label: &str, coords: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, label, coords))
}
