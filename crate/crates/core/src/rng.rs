//! Counter-based random draws.
//!
//! Each draw is addressed by `(seed, stream, index)` so that the value for a
//! given agent never depends on how work is split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform sample in `[0, 1)` addressed by `(seed, stream, index)`.
pub fn unit(seed: u64, stream: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.gen::<f64>()
}

/// `n` i.i.d. uniform samples on `[lo, hi)` for replica `stream`.
pub fn uniform_vec(seed: u64, stream: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * unit(seed, stream, i as u64)).collect()
}

/// Seeded sequential generator for test-instance construction.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
