//! Counter-based random streams: one ChaCha8 key per seed, one stream id per consumer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for `(seed, stream)`; distinct stream ids never overlap.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids reserved per purpose so that, e.g., batch `k` of training never shares a stream
/// with evaluation task `k`.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const TRAIN_BATCH: u64 = 1 << 32;
    pub const DROPOUT: u64 = 2 << 32;
    pub const EVAL: u64 = 3 << 32;
    pub const BANDIT: u64 = 4 << 32;
    pub const BO: u64 = 5 << 32;
    pub const SAMPLING: u64 = 6 << 32;
    pub const PROPS: u64 = 7 << 32;
}
