use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::crypto::SigningKeyPair;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

const CACHED_BLIND_KEYS: usize = 4;

/// Deterministic 1024-bit blind keys, generated once per test binary.
pub fn blind_key(i: usize) -> SigningKeyPair {
    static KEYS: OnceLock<Vec<SigningKeyPair>> = OnceLock::new();
    KEYS.get_or_init(|| {
        (0..CACHED_BLIND_KEYS)
            .map(|k| {
                SigningKeyPair::generate_blind(&mut rng(0xB11D + k as u64), 1024).expect("keygen")
            })
            .collect()
    })[i % CACHED_BLIND_KEYS]
        .clone()
}
