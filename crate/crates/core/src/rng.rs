//! Deterministic RNG streams for replicated experiments.
//!
//! Each replication owns an independent ChaCha substream derived from
//! `(master_seed, replication_index)`, so results are bit-identical for any
//! thread count and replications can run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The substream for one replication of a study.
pub fn substream(master_seed: u64, replication: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(replication.wrapping_add(1).into());
    rng
}
