use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Deterministic, epoch-based shuffled batch order over dataset indices.
#[derive(Clone, Debug)]
pub struct BatchStream {
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

pub fn make_batches<T>(data: &[T], batch_size: usize, seed: u64) -> Result<BatchStream> {
    let dataset_len = data.len();
    if dataset_len == 0 {
        return Err(Error::EmptySequence);
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut s = BatchStream {
        len: dataset_len,
        batch_size,
        seed,
        epoch: 0,
        order: Vec::new(),
        cursor: 0,
    };
    s.order = s.epoch_order(0);
    Ok(s)
}

impl BatchStream {
    /// Index permutation used in a given epoch.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        order
    }

    /// All batches of one epoch; the last one may be short.
    pub fn epoch_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        self.epoch_order(epoch)
            .chunks(self.batch_size)
            .map(|c| c.to_vec())
            .collect()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.cursor >= self.len {
            self.epoch += 1;
            self.order = self.epoch_order(self.epoch);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.len);
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_sizes_and_coverage() {
        let s = make_batches(&[(); 10], 3, 1).unwrap();
        let b = s.epoch_batches(0);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let streamed: Vec<Vec<usize>> = make_batches(&[(); 10], 3, 1).unwrap().take(4).collect();
        assert_eq!(streamed, b);
    }

    #[test]
    fn seeds_control_order() {
        let a = make_batches(&[(); 100], 7, 5).unwrap();
        let b = make_batches(&[(); 100], 7, 5).unwrap();
        assert_eq!(a.epoch_order(0), b.epoch_order(0));
        let c = make_batches(&[(); 100], 7, 6).unwrap();
        assert_ne!(a.epoch_order(0), c.epoch_order(0));
        assert_ne!(a.epoch_order(0), a.epoch_order(1));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(make_batches::<()>(&[], 3, 0).is_err());
    }
}
