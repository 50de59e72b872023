//! Deterministic minibatch index sequences.

use crate::seed::{stream, STREAM_BATCH};
use rand::seq::SliceRandom;

/// Partition `0..n_samples` into batches of `batch_size` (the last may be
/// short). With `shuffle`, the permutation is drawn from a stream derived
/// from `seed`; without, batches follow manifest order.
pub fn make_batches(n_samples: usize, batch_size: usize, seed: u64, shuffle: bool) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..n_samples).collect();
    if shuffle {
        order.shuffle(&mut stream(seed, &[STREAM_BATCH]));
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}
