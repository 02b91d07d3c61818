//! Seed hierarchy.
//!
//! Every random stream is derived from a run seed by hashing a path of
//! labels, so adding a worker or a new stream never shifts the draws of an
//! existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Labels for the per-worker sub-streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Domain = 2,
    Env = 3,
    Action = 4,
    Shuffle = 5,
    Eval = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` and a counter `index`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(0x51_7C_C1_B7_27_22_0A_95)))
}

pub fn seed_path(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(root, |acc, &i| derive_seed(acc, i))
}

pub fn stream(root: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(seed_path(root, path))
}

/// Stream `kind` of worker `worker` under run seed `seed`.
pub fn worker_stream(seed: u64, worker: usize, kind: Stream) -> Rng {
    stream(seed, &[0x5EED, worker as u64, kind as u64])
}

/// Stream used for shared (not per-worker) initialization under `seed`.
pub fn shared_stream(seed: u64, kind: Stream) -> Rng {
    stream(seed, &[0xC0DE, kind as u64])
}
