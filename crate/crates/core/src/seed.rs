//! Deterministic derivation of independent RNG streams from one master seed.
//!
//! Every source of randomness in a run (parameter init, batch shuffling,
//! reparametrization noise, validation splits, data generation) draws from its
//! own ChaCha8 stream, seeded by mixing the master seed with a stream tag and
//! any indices (domain, fold, seed repetition). Mixing uses splitmix64, so
//! nearby tags and indices still produce unrelated streams, and the whole
//! experiment is a pure function of the master seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags: first element of the `parts` slice by convention.
pub const STREAM_DATAGEN: u64 = 0xDA7A;
pub const STREAM_INIT: u64 = 0x1217;
pub const STREAM_SPLIT: u64 = 0x5917;
pub const STREAM_BATCH: u64 = 0xBA7C;
pub const STREAM_EPS: u64 = 0xE953;
pub const STREAM_RUN: u64 = 0x4217;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mix a master seed with stream tag + indices into a derived seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &p in parts {
        // Offset by 1 so a part of 0 still perturbs the state.
        s = splitmix64(s ^ splitmix64(p.wrapping_add(1)));
    }
    s
}

/// ChaCha8 stream for `(master, parts)`.
pub fn stream(master: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, parts))
}
