//! Keyed random streams.
//!
//! Every consumer of randomness (a repetition, a sample block, a replicate)
//! gets its own stream derived from one master seed by a sequence of integer
//! keys. The stream is a ChaCha8 generator whose 64-bit stream id is a hash of
//! the key path, so results never depend on the order in which work items run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose keys used when deriving substreams.
pub mod purpose {
    pub const SAMPLE_X: u64 = 1;
    pub const SAMPLE_Y: u64 = 2;
    pub const MULTIPLIER: u64 = 3;
    pub const SUBSAMPLE: u64 = 4;
    pub const TEST: u64 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    path: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, path: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream for `key`; `a.substream(x).substream(y)` differs from
    /// `a.substream(y).substream(x)`.
    pub fn substream(&self, key: u64) -> Self {
        Self {
            seed: self.seed,
            path: splitmix64(self.path.rotate_left(23) ^ splitmix64(key)),
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.path);
        rng
    }
}
