//! Deterministic seed derivation.
//!
//! Every random stream in the crate (parameter init, sampling noise, corpus
//! synthesis, epoch shuffles, grid points) is derived from a base seed plus
//! string/integer tags via FNV-1a, so independent streams never alias and
//! runs are reproducible from a single seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

#[derive(Clone, Copy, Debug)]
pub struct SeedMix(u64);

impl SeedMix {
    pub fn new(base: u64) -> Self {
        SeedMix(FNV_OFFSET).with_u64(base)
    }

    pub fn with_u64(self, v: u64) -> Self {
        let mut h = self.0;
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        SeedMix(h)
    }

    pub fn with_str(self, s: &str) -> Self {
        let mut h = self.0;
        for &byte in s.as_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        SeedMix(h)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Stream for a named parameter: identical across models that share the name.
pub fn param_rng(base: u64, name: &str) -> ChaCha8Rng {
    SeedMix::new(base).with_str("param").with_str(name).rng()
}

/// Per-step sampling noise stream.
pub fn noise_rng(base: u64, epoch: u64, step_in_epoch: u64) -> ChaCha8Rng {
    SeedMix::new(base)
        .with_str("noise")
        .with_u64(epoch)
        .with_u64(step_in_epoch)
        .rng()
}

/// Per-epoch shuffle stream.
pub fn shuffle_seed(base: u64, epoch: u64) -> u64 {
    SeedMix::new(base).with_str("shuffle").with_u64(epoch).value()
}

/// Independent seed for one grid point.
pub fn grid_seed(base: u64, index: u64) -> u64 {
    SeedMix::new(base).with_str("grid").with_u64(index).value()
}
