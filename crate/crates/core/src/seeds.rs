//! Derivation of child seeds from a single root seed.
//!
//! Every stage that needs randomness asks for `derive(root, "stage-name")`.
//! The child seed is the first eight bytes (little endian) of
//! `SHA-256(root_le_bytes || name)`, so adding a stage never perturbs the
//! streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(root: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Child seed for the `index`-th unit of work (tree, participant, fold).
pub fn derive_indexed(root: u64, name: &str, index: u64) -> u64 {
    derive(root, &format!("{name}/{index}"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
