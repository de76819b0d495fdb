//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! the run seed, so adding draws in one place never perturbs another.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// Well-known stream identifiers.
pub mod stream {
    pub const EXTRACTOR_INIT: u64 = 1;
    pub const DISCRIMINATOR_INIT: u64 = 2;
    pub const EXTRACTOR_BATCHES: u64 = 3;
    pub const DISCRIMINATOR_BATCHES: u64 = 4;
    pub const PROTOTYPES: u64 = 10;
    pub const NOISE: u64 = 11;
    pub const SPLIT: u64 = 12;
    pub const HOLDOUT: u64 = 13;
    pub const PROBE: u64 = 20;
    pub const GRADSUITE: u64 = 30;
    /// Camera `c` uses stream `CAMERA_BASE + c`.
    pub const CAMERA_BASE: u64 = 1000;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
