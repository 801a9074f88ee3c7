//! Deterministic random streams.
//!
//! Every stochastic source draws from its own ChaCha stream keyed by
//! `(seed, purpose, index)`, so a run can be resumed at any step without
//! saving generator state.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Flip = 3,
    PoolX = 4,
    PoolY = 5,
    Synth = 6,
    Test = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Source of every random stream in a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

/// Seeds all stochastic sources (weight init, shuffling, flips, pool sampling).
pub fn seed_all(seed: u64) -> SeedStreams {
    SeedStreams { seed }
}

impl SeedStreams {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, purpose: Purpose, index: u64) -> ChaCha8Rng {
        let key = splitmix(splitmix(self.seed ^ splitmix(purpose as u64)) ^ index);
        ChaCha8Rng::seed_from_u64(key)
    }
}
