//! Deterministic domain-separated sub-seeding.
//!
//! Every random decision in the pipeline (model init, epoch shuffles,
//! synthetic generation) draws from a ChaCha stream keyed by the run seed,
//! a domain label, and an index, so independent components never share or
//! reorder each other's randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn subseed(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
