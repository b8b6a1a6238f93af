//! Named deterministic random streams.
//!
//! Every source of randomness goes through a [`RandomStream`]: a ChaCha8
//! generator keyed by a 64-bit seed and a stream index. Parallel trials use
//! disjoint stream indices under the same master seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, 0)
    }

    /// Stream `index` of the family rooted at `master_seed`.
    pub fn derive(master_seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(index);
        Self {
            seed: master_seed,
            stream: index,
            rng,
        }
    }

    /// A child stream, independent of `self`, selected by `tag`.
    ///
    /// The child is keyed by the parent's seed and stream mixed with `tag`, so
    /// the same (seed, stream, tag) triple always yields the same child.
    pub fn child(&self, tag: u64) -> Self {
        let mixed = splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x9e37_79b9)));
        Self::derive(mixed, tag)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
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

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
