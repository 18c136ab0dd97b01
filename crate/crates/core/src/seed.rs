//! Per-item seed derivation.
//!
//! Every random decision tied to an item draws from its own generator seeded
//! by hashing the global seed, a purpose label and the item id, so results do
//! not depend on processing order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(global: u64, purpose: &str, item_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update([0u8]);
    h.update(item_id.as_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

pub fn item_rng(global: u64, purpose: &str, item_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, purpose, item_id))
}
