use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::DataError;

/// Epoch-wise mini-batch sampler over one agent's shard.
///
/// Each local epoch is a fresh permutation of the shard cut into
/// consecutive blocks of `batch_size`; the last block is short when the
/// shard size is not a multiple of the batch size.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    /// `indices` are pool row indices of the shard.
    pub fn new(indices: &[usize], batch_size: usize, mut rng: ChaCha8Rng) -> Result<Self, DataError> {
        if indices.is_empty() {
            return Err(DataError::EmptyShard);
        }
        if batch_size == 0 {
            return Err(DataError::InvalidArgument("batch size must be positive".into()));
        }
        let mut order = indices.to_vec();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            cursor: 0,
            batch_size,
            rng,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn shard_len(&self) -> usize {
        self.order.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Pool indices of the next batch.
    pub fn next_batch(&mut self) -> &[usize] {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        let end = (start + self.batch_size).min(self.order.len());
        self.cursor = end;
        &self.order[start..end]
    }
}
