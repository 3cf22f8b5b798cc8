//! Seed derivation for reproducible, independent random streams.
//!
//! Every random draw in the pipeline comes from a [`RngStream`] obtained via
//! [`derive_stream`]. The stream seed is the SHA-256 digest of a fixed domain
//! string followed by the little-endian encoding of
//! `(purpose, master_seed, experiment_id, epoch, batch)`; the digest seeds a
//! ChaCha20 generator. Distinct tuples therefore map to distinct seeds except
//! with negligible (hash-collision) probability, and identical tuples always
//! yield the identical stream.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"bulkalloc/stream/v1";

/// Which part of the pipeline a stream feeds. Families never share seeds, so
/// training, validation and test data are disjoint by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    Train,
    Validation,
    Test,
    Init,
    /// Free-form streams for diagnostics and synthetic studies.
    Aux,
}

impl StreamPurpose {
    fn tag(self) -> u8 {
        match self {
            StreamPurpose::Train => 1,
            StreamPurpose::Validation => 2,
            StreamPurpose::Test => 3,
            StreamPurpose::Init => 4,
            StreamPurpose::Aux => 5,
        }
    }
}

/// Full identity of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub purpose: StreamPurpose,
    pub master_seed: u64,
    pub experiment_id: u64,
    pub epoch: u64,
    pub batch: u64,
}

impl StreamKey {
    pub fn seed_bytes(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(DOMAIN);
        hasher.update([self.purpose.tag()]);
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update(self.experiment_id.to_le_bytes());
        hasher.update(self.epoch.to_le_bytes());
        hasher.update(self.batch.to_le_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        seed
    }
}

/// Deterministic random stream. Implements [`RngCore`], so it works with every
/// `rand`/`rand_distr` sampler.
#[derive(Debug, Clone)]
pub struct RngStream(ChaCha20Rng);

impl RngStream {
    pub fn from_key(key: StreamKey) -> Self {
        RngStream(ChaCha20Rng::from_seed(key.seed_bytes()))
    }
}

impl RngCore for RngStream {
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

pub fn derive_stream(
    purpose: StreamPurpose,
    master_seed: u64,
    experiment_id: u64,
    epoch: u64,
    batch: u64,
) -> RngStream {
    RngStream::from_key(StreamKey {
        purpose,
        master_seed,
        experiment_id,
        epoch,
        batch,
    })
}
