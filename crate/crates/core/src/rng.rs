//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`). Named
//! substreams are keyed by SHA-256 over `seed (u64 LE) || 0x00 || label`, and
//! the 32-byte digest is used directly as the ChaCha seed. Work split across
//! threads therefore draws the same numbers as a sequential run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Top-level generator for a plain seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for `(seed, label)`.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(label.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Draws `count` distinct indices from `0..len` with a partial Fisher-Yates
/// shuffle, returned in draw order.
pub fn sample_indices(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<usize> {
    use rand::Rng;
    let count = count.min(len);
    let mut pool: Vec<usize> = (0..len).collect();
    for i in 0..count {
        let j = rng.random_range(i..len);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}
