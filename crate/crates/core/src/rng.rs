//! Named, reproducible random substreams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Substream names used across the toolkit.
pub mod stream {
    pub const DATA: &str = "data";
    pub const INIT: &str = "init";
    pub const SHUFFLE: &str = "shuffle";
    pub const SPLIT: &str = "split";
    pub const WARMUP: &str = "warmup";
    pub const SIMULATION: &str = "simulation";
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Generator for substream `name` of `root_seed`.
pub fn substream(root_seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(fnv1a(name));
    rng
}

/// Generator for the `index`-th chunk of substream `name`; chunks are
/// independent so they can be drawn in any order or in parallel.
pub fn chunk_stream(root_seed: u64, name: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed ^ fnv1a(name));
    rng.set_stream(index);
    rng
}

/// Serializable position of a [`Rng`]: seed, stream and word position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
