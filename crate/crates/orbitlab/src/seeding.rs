//! Labeled seed derivation: every random draw in a run descends from the
//! global seed through `derive_seed(parent, label, index)` — no ambient
//! entropy anywhere. The scheme is the first 8 little-endian bytes of
//! SHA-256(parent_le || label || index_le).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(parent: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[0..8].try_into().unwrap())
}

pub fn rng_from(parent: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, label, index))
}
