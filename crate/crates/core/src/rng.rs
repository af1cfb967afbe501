//! Deterministic random streams.
//!
//! All randomness in an experiment flows from one root seed. Sub-streams are
//! derived by hashing `root || label` so independent pipeline stages (for
//! example `"diffusion:train"` vs `"augment:mask:17"`) never share state and
//! stay reproducible when stages are added or reordered.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derives a named ChaCha stream from the root seed.
pub fn stream(root_seed: u64, label: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(seed)
}

/// Collapses a named stream to a plain u64, for APIs that take seeds.
pub fn stream_seed(root_seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
