//! Seeded, index-splittable random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the 64-bit run seed and
//! selected by a stream index, so the values drawn by task `i` do not depend
//! on how many other tasks ran or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
