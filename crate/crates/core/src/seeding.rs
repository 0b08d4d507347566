//! Deterministic seed derivation. Every stochastic step draws from a ChaCha
//! stream keyed by `(master seed, tags...)`, so parallel work is reproducible
//! independent of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_from(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}
