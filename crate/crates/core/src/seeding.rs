//! Deterministic per-item random streams derived from a run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of a named stream; independent of evaluation order.
pub fn child_seed(seed: u64, domain: &str, index: u64) -> u64 {
    let mut h = splitmix(seed);
    for b in domain.bytes() {
        h = splitmix(h ^ b as u64);
    }
    splitmix(h ^ index)
}

pub fn rng_for(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(seed, domain, index))
}
