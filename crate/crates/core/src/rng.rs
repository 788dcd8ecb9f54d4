//! Seed stream splitting.
//!
//! Every command takes a single master seed. Independent random streams are
//! derived from it by hashing the seed together with a stream label:
//! `sub_seed = u64_le(sha256(seed_le_bytes || label)[0..8])`. Each stream then
//! drives its own ChaCha8 generator, so adding a new consumer never shifts the
//! draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(seed: u64, label: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}
