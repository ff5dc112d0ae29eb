//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream addressed by
//! `(seed, operation, index)`. Sample `i` of an ensemble always sees the same
//! numbers no matter which worker runs it or in which order, so estimates are
//! bit-identical across thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator handed to samplers.
pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn operation labels into stream ids.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Addresses a family of independent streams, one per sample index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    op: u64,
}

impl StreamKey {
    /// Root key for a run with the given seed.
    pub fn new(seed: u64) -> Self {
        Self { seed, op: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child key for a named sub-operation.
    pub fn derive(&self, label: &str) -> Self {
        self.derive_index(label_hash(label))
    }

    /// Child key for a numbered sub-operation (e.g. a nested run per point).
    pub fn derive_index(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            op: splitmix64(self.op ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    /// The stream for sample `index` of this operation.
    pub fn stream(&self, index: u64) -> Stream {
        let mut key = [0u8; 32];
        let mut state = splitmix64(self.seed) ^ self.op;
        for chunk in key.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}
