//! Labelled random streams derived from one master seed.
//!
//! Each consumer (initialisation, partitioning, batching, topology
//! generation, evaluation subsampling) draws from its own stream so that
//! changing how much one consumer draws never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The independent consumers of randomness in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Init,
    Partition,
    Batching,
    Topology,
    Evaluation,
}

impl Stream {
    fn label(self) -> &'static [u8] {
        match self {
            Stream::Init => b"init",
            Stream::Partition => b"partition",
            Stream::Batching => b"batching",
            Stream::Topology => b"topology",
            Stream::Evaluation => b"evaluation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Generator for `stream`, sub-indexed by `index` (an agent id, an
    /// attempt counter, ...).
    pub fn rng(&self, stream: Stream, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(derive_seed(self.master, stream.label(), index))
    }
}

/// Seed for a raw `(master, label, index)` triple.
pub fn derive_seed(master: u64, label: &[u8], index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"difflearn/");
    hasher.update(master.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    seed
}

/// Generator seeded directly from an integer, for standalone helpers that
/// take a bare `seed` argument.
pub fn rng_from(seed: u64, label: &[u8]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(seed, label, 0))
}
