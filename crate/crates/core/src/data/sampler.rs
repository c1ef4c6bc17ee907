use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Draws index batches uniformly without replacement within a batch.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(seed: u64) -> Self {
        BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self, dataset_len: usize, batch_size: usize) -> Result<Vec<usize>> {
        if batch_size == 0 || batch_size > dataset_len {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} invalid for dataset of {dataset_len}"
            )));
        }
        Ok(rand::seq::index::sample(&mut self.rng, dataset_len, batch_size).into_vec())
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
