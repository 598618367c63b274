//! Seed splitting and content hashing.
//!
//! Every random stream in an experiment is derived from one master seed:
//! `derive_seed(master, stage, index)` takes the first eight bytes (little
//! endian) of `SHA-256(master_le ‖ stage_utf8 ‖ 0x00 ‖ index_le)`. Anyone
//! reimplementing the pipeline can reproduce the exact streams from this
//! rule alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, stage: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(stage.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stage_rng(master: u64, stage: &str, index: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(master, stage, index))
}

/// Hex SHA-256 of a byte slice.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
