//! Seed derivation.
//!
//! Every random stream in the crate is seeded from a single experiment seed
//! and a stage name: `derive(seed, name)` is the first eight bytes
//! (little-endian) of `SHA-256(seed_le_bytes || name)`. Stages can therefore
//! be rerun independently and still see the same randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(seed: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stage))
}

/// Hex-encoded SHA-256 of a byte string, used for artifact manifests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
