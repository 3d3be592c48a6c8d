//! Reproducible random sub-streams.
//!
//! Every trajectory draws from its own ChaCha8 stream. The 256-bit key is
//! expanded from the scenario seed with `SeedableRng::seed_from_u64`, and the
//! 64-bit ChaCha stream id is the trajectory index. ChaCha is counter based,
//! so the numbers a trajectory sees depend only on `(seed, index)` and never
//! on which worker thread runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// Returns the generator for sub-stream `index` of `seed`.
pub fn stream_rng(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
