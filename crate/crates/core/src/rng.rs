//! Reproducible random streams keyed by `(seed, stream)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SimRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn rng(&self) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Stream id for trajectory `id` of campaign task `task`.
    pub fn for_task(seed: u64, task: u32, id: u32) -> Self {
        RngStream::new(seed, (task as u64) << 32 | id as u64)
    }
}

/// Position of a stream, enough to restore it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    pub stream: u64,
    /// Word position, stored as a decimal string since it is 128 bits wide.
    pub word_pos: String,
}

impl RngSnapshot {
    pub fn capture(origin: RngStream, rng: &SimRng) -> Self {
        RngSnapshot {
            seed: origin.seed,
            stream: origin.stream,
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<SimRng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad RNG word position {:?}", self.word_pos)))?;
        let mut rng = RngStream::new(self.seed, self.stream).rng();
        rng.set_word_pos(pos);
        Ok(rng)
    }
}
