//! Reproducible random streams.
//!
//! Every Monte Carlo task draws from its own ChaCha stream selected by
//! `(master_seed, purpose, task_index)`. The seed word is mixed with the
//! purpose label through SplitMix64 and the task index picks the ChaCha
//! stream, so a task sees the same numbers no matter which thread runs it
//! or how many threads exist.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type SimRng = ChaCha12Rng;

/// Purpose labels keep independent uses of the same master seed apart.
pub mod purpose {
    pub const GEOMETRY: u64 = 0x6765_6f6d;
    pub const UPLINK_PHASE: u64 = 0x756c_7068;
    pub const DOWNLINK_GEOMETRY: u64 = 0x646c_6765;
    pub const OBSERVATION: u64 = 0x6f62_7376;
    pub const EM_INIT: u64 = 0x656d_696e;
    pub const CODEBOOK: u64 = 0x636f_6462;
    pub const CONSTELLATION: u64 = 0x636f_6e73;
    pub const SWMMSE: u64 = 0x7377_6d6d;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, purpose: u64) -> u64 {
    splitmix64(master ^ splitmix64(purpose))
}

/// RNG for task `task` of the given purpose.
pub fn task_rng(master: u64, purpose: u64, task: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(derive_seed(master, purpose));
    rng.set_stream(task);
    rng
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
