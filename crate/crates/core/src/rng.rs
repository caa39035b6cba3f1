//! Seeding for reproducible, independently schedulable trials.
//!
//! Every random draw in the toolkit comes from ChaCha8, a counter-based
//! generator: a (key, stream id, block counter) triple fully determines the
//! output, so a trial can be replayed in isolation from its sub-seed.
//! A trial's sub-seed is `mix(master_seed, trial_index)`; within a trial the
//! sample stream, the initializer and the validation draws use distinct
//! ChaCha stream ids under that key, so adding draws to one never shifts
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// ChaCha stream ids used inside one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Samples = 0,
    Init = 1,
    Validation = 2,
    Rotation = 3,
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for trial `index` under `master`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x6A09_E667_F3BC_C909)))
}

/// Generator for one purpose under a seed.
pub fn rng_for(seed: u64, purpose: Purpose) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}
