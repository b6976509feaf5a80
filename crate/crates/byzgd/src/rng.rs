//! Seed management.
//!
//! Every random stream in the crate is derived from a master seed by hashing
//! `(seed, purpose-tag, indices...)` into a ChaCha key. Streams are therefore
//! independent of evaluation order: worker 7's data does not change when
//! worker 3 is generated first, and adding a new purpose tag never perturbs
//! existing streams.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Deterministic RNG for `(master_seed, purpose, indices)`.
pub fn derive_rng(master_seed: u64, purpose: &str, indices: &[u64]) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    for ix in indices {
        hasher.update(ix.to_le_bytes());
    }
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha12Rng::from_seed(digest)
}

/// Deterministic sub-seed, for APIs that take a `u64` seed of their own.
pub fn derive_seed(master_seed: u64, purpose: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    for ix in indices {
        hasher.update(ix.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 output is 32 bytes"))
}
