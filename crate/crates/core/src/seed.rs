//! Counter-based seed derivation.
//!
//! Every random stream in a simulation is keyed by `(master, purpose, a, b)`
//! and mixed through SplitMix64, so a client's stream never depends on how
//! many other clients or rounds exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. The discriminant is part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Partition = 2,
    ModelInit = 3,
    DecoderInit = 4,
    Shuffle = 5,
    Probe = 6,
    Proxy = 7,
    Attack = 8,
    Sampling = 9,
    Noise = 10,
    Calibration = 11,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn derive(&self, purpose: Purpose, a: u64, b: u64) -> u64 {
        let mut h = splitmix64(self.master);
        h = splitmix64(h ^ purpose as u64);
        h = splitmix64(h ^ a);
        splitmix64(h ^ b)
    }

    pub fn rng(&self, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(purpose, a, b))
    }
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
