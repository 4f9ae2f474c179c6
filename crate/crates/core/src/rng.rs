//! Reproducible random streams.
//!
//! Every draw is addressed by `(seed, epoch, cell, position)`: the seed picks a
//! ChaCha key, `epoch` and `cell` pick one of its 2^64 independent streams and
//! the position within the stream is the draw index. A cell's `l`-th sample is
//! therefore the same whatever order the policy visits cells in, and results
//! do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Epoch used by sequential policy runs.
pub const SEQUENTIAL_EPOCH: u32 = 0;
/// Epoch reserved for the exhaustive-simulation ground-truth oracle.
pub const ORACLE_EPOCH: u32 = u32::MAX;

/// Seed of macro-replication `replication` under `base_seed`.
pub fn replication_seed(base_seed: u64, replication: u64) -> u64 {
    base_seed.wrapping_add(replication)
}

/// One independent stream per grid cell.
#[derive(Debug, Clone)]
pub struct CellStreams {
    streams: Vec<ChaCha8Rng>,
}

/// The stream of a single cell.
pub fn cell_stream(seed: u64, epoch: u32, cell: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(epoch) << 32) | cell as u64);
    rng
}

impl CellStreams {
    pub fn new(seed: u64, epoch: u32, cells: usize) -> Self {
        let key = ChaCha8Rng::seed_from_u64(seed);
        let streams = (0..cells)
            .map(|cell| {
                let mut rng = key.clone();
                rng.set_stream((u64::from(epoch) << 32) | cell as u64);
                rng
            })
            .collect();
        CellStreams { streams }
    }

    #[inline]
    pub fn cell(&mut self, index: usize) -> &mut ChaCha8Rng {
        &mut self.streams[index]
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }
}
