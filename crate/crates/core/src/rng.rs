//! Counter-derived random streams. Every consumer gets its own ChaCha stream
//! keyed by `(seed, tag, index)`, so results do not depend on thread
//! scheduling or on how many draws another consumer made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: u64 = 1;
pub const ENV: u64 = 2;
pub const ROLLOUT: u64 = 3;
pub const OPTIMIZER: u64 = 4;

pub fn substream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 32) | (index & 0xffff_ffff));
    rng
}
