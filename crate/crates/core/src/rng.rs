//! Seeded random streams with indexed substreams.
//!
//! Every stochastic step (drop generation, random initial phases, each
//! Gaussian-randomization candidate) draws from a stream addressed by a
//! path of integers below the master seed, so results do not depend on the
//! order in which work is scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose tags used as the first path component of derived streams.
pub mod purpose {
    pub const DROP: u64 = 1;
    pub const AO_INIT: u64 = 2;
    pub const AO_RANDOMIZE: u64 = 3;
    pub const IC_RANDOMIZE: u64 = 4;
}

#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stream addressed by `path` below `seed`. Distinct paths give
    /// statistically independent streams.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let mut key = splitmix64(seed);
        for &p in path {
            key = splitmix64(key ^ splitmix64(p.wrapping_add(0x5851_F42D_4C95_7F2D)));
        }
        Self::new(key)
    }

    /// Child stream of this one, addressed by `path`.
    pub fn child(&self, path: &[u64]) -> Self {
        Self::derive(self.seed, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
