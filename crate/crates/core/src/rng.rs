//! Deterministic random streams.
//!
//! Every stochastic step draws from a stream keyed by `(seed, sequence id,
//! stage tag, index)`. Keys are hashed with SHA-256 into a ChaCha seed, so a
//! stream depends only on its key and never on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha12Rng;

/// Stage tags used by the pipeline.
pub mod stage {
    pub const DEQUANTIZE: &str = "dequantize";
    pub const GAINS: &str = "gains";
    pub const NOISE: &str = "noise";
    pub const FLATFIELD: &str = "flatfield";
    pub const WEIGHTS: &str = "weights";
}

/// Derive the stream for `(seed, sequence, stage, index)`.
pub fn derive_stream(seed: u64, sequence: &str, stage: &str, index: u64) -> Stream {
    let mut h = Sha256::new();
    h.update(b"rawvid-stream-v1");
    h.update(seed.to_le_bytes());
    for part in [sequence.as_bytes(), stage.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    Stream::from_seed(key)
}

/// Split an independent child stream off `parent` (consumes 32 bytes).
pub fn child_stream(parent: &mut Stream) -> Stream {
    Stream::from_rng(parent)
}
