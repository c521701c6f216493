//! Counter-based seed derivation.
//!
//! A single global seed fans out into independent sub-streams keyed by a
//! label and any number of integer coordinates (epoch, triplet index, ...).
//! Derivation is a pure function of its inputs, so streams do not depend on
//! the order in which they are requested.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive a sub-seed from `seed`, a stream label and coordinates.
pub fn derive(seed: u64, label: &str, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ fnv1a(label));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(GOLDEN)));
    }
    h
}

pub fn rng(seed: u64, label: &str, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, label, coords))
}
