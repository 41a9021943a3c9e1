//! Seeded generators. Every parallel task draws from its own ChaCha stream
//! keyed by (master seed, task index), so results do not depend on how tasks
//! are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream index for a (group, item) pair.
pub fn stream_id(group: u64, item: u64) -> u64 {
    (group << 32) ^ item
}
