//! Deterministic per-replica random streams.
//!
//! Replica `i` of a run with master seed `s` draws from the ChaCha8 stream
//! keyed by `s` (expanded with `seed_from_u64`) at stream id `i`. Streams
//! are independent and adding replicas never changes earlier ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ReplicaRng = ChaCha8Rng;

pub fn replica_rng(master_seed: u64, replica: u64) -> ReplicaRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replica);
    rng
}

/// Derives a sub-seed for an independent experiment inside a suite.
pub fn derive_seed(master_seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, folded into the master seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ master_seed.rotate_left(17)
}
