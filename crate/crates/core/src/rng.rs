//! Named random sub-streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Sub-stream names used throughout training.
pub mod streams {
    pub const AUGMENT: &str = "augmentation";
    pub const INIT: &str = "init";
    pub const SAMPLING: &str = "sampling";
    pub const BATCHING: &str = "batching";
    pub const SPLIT: &str = "split";
    pub const DATA: &str = "data";
    pub const MIXING: &str = "mixing";
    pub const SUBGRAPH: &str = "subgraph";
}

/// Deterministic generator for `(seed, name)`. Distinct names give
/// independent streams; the mapping is stable across platforms.
pub fn stream(seed: u64, name: &str) -> Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Sub-stream indexed by a counter (epoch, batch, cell...).
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> Rng {
    stream(seed, &format!("{name}/{index}"))
}
