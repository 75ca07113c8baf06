//! Seeded random streams.
//!
//! Every stochastic step draws from its own ChaCha8 stream. A stream is named
//! by the global seed, a [`Stream`] label and a path of integer keys
//! (iteration, sample, output, ...). The path is folded with SplitMix64 into
//! the 256-bit ChaCha seed, so the same `(seed, stream, keys)` yields the same
//! draws on every platform. Integer draws go through `u32` ranges so the
//! result does not depend on the width of `usize`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Stream {
    Data,
    Minibatch,
    Index,
    Init,
    Output,
    Sweep,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 0x6461_7461,
            Stream::Minibatch => 0x6d69_6e69,
            Stream::Index => 0x696e_6478,
            Stream::Init => 0x696e_6974,
            Stream::Output => 0x6f75_7470,
            Stream::Sweep => 0x7377_6570,
        }
    }
}

pub(crate) const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of round `round` from a base seed. Round 0 keeps the base
/// seed so a single-round run matches a plain run.
pub fn round_seed(seed: u64, round: u64) -> u64 {
    if round == 0 {
        seed
    } else {
        splitmix64(seed ^ splitmix64(round.wrapping_mul(0xa076_1d64_78bd_642f)))
    }
}

/// Names one random stream. Cheap to copy; call [`RngHandle::rng`] to get
/// the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngHandle {
    seed: u64,
    stream: Stream,
    key: u64,
}

impl RngHandle {
    pub fn new(seed: u64, stream: Stream) -> Self {
        Self {
            seed,
            stream,
            key: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    /// Sub-stream keyed by `k`. Children of distinct keys are independent.
    pub fn child(&self, k: u64) -> Self {
        let key = splitmix64(self.key.rotate_left(23) ^ splitmix64(k.wrapping_add(0x632b_e59b_d9b4_e019)));
        Self { key, ..*self }
    }

    pub fn rng(&self) -> StreamRng {
        let s0 = splitmix64(self.seed);
        let s1 = splitmix64(s0 ^ self.stream.tag());
        let s2 = splitmix64(s1 ^ self.key);
        let s3 = splitmix64(s2 ^ 0x5851_f42d_4c95_7f2d);
        let mut bytes = [0u8; 32];
        for (chunk, word) in bytes.chunks_exact_mut(8).zip([s0, s1, s2, s3]) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        StreamRng(ChaCha8Rng::from_seed(bytes))
    }
}

/// Generator for one stream.
#[derive(Debug, Clone)]
pub struct StreamRng(ChaCha8Rng);

impl StreamRng {
    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    /// Uniform on `[lo, hi]`; returns `lo` when the range is degenerate.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            lo + (hi - lo) * self.uniform()
        }
    }

    /// Uniform index in `0..len`. Panics if `len` is zero or exceeds `u32::MAX`.
    pub fn index(&mut self, len: usize) -> usize {
        assert!(len > 0 && len <= u32::MAX as usize, "index range out of bounds");
        self.0.random_range(0..len as u32) as usize
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
