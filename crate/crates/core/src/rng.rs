//! Seed plumbing.
//!
//! Every stochastic draw in a run flows from one `u64` seed. Subsystems pull
//! named streams from a [`SeedTree`] so that, for example, replay sampling
//! consuming more or fewer values never shifts what weight init sees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// Derives independent named RNG streams from a single run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A reproducible stream tied to `label`. Streams with different labels
    /// are statistically independent and consuming one never advances another.
    pub fn stream(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.digest(label))
    }

    /// A derived subtree, for components that hand out streams of their own.
    pub fn child(&self, label: &str) -> SeedTree {
        let d = self.digest(label);
        SeedTree {
            seed: u64::from_le_bytes(d[..8].try_into().unwrap()),
        }
    }

    fn digest(&self, label: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(label.as_bytes());
        h.finalize().into()
    }
}

/// Fills `out` with draws from N(0, 1).
pub fn fill_standard_normal(rng: &mut impl Rng, out: &mut [f32]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}
