//! Named, seeded random streams.
//!
//! Every stochastic stage draws from its own stream, identified by the run
//! seed plus a slash-separated stream name (`"select/class3"`, `"noise/bw/17"`).
//! The generator key is the SHA-256 of the seed and the name, and the
//! generator itself is ChaCha8, so a stream produces the same sequence on
//! every platform and regardless of which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: String,
}

impl RngStream {
    pub fn new(seed: u64, stream: impl Into<String>) -> Self {
        Self {
            seed,
            stream: stream.into(),
        }
    }

    /// Root stream for a run.
    pub fn root(seed: u64) -> Self {
        Self::new(seed, "")
    }

    pub fn substream(&self, name: impl AsRef<str>) -> Self {
        let name = name.as_ref();
        let stream = if self.stream.is_empty() {
            name.to_owned()
        } else {
            format!("{}/{}", self.stream, name)
        };
        Self {
            seed: self.seed,
            stream,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update([0u8]);
        hasher.update(self.stream.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }
}
