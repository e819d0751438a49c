//! Seeded random streams.
//!
//! Every shot draws from its own ChaCha stream keyed by `(seed, stream)`, so
//! generation can be split across threads and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ShotRng = ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> ShotRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for the `index`-th shot of a given state within a dataset.
pub fn shot_stream(index: u64, state: u8) -> u64 {
    (index << 1) | u64::from(state & 1)
}
