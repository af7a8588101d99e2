//! Deterministic train/test splitting: shuffle indices with a seeded
//! generator, cut at the rounded fraction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Splits `samples` into disjoint, exhaustive (train, test) lists. Both
/// sides must end up non-empty.
pub fn split_dataset<T>(
    samples: Vec<T>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if samples.len() < 2 {
        return Err(Error::config(format!(
            "cannot split {} sample(s); need at least 2",
            samples.len()
        )));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::config(format!(
            "train fraction {train_fraction} outside [0, 1]"
        )));
    }
    let n = samples.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::config(format!(
            "fraction {train_fraction} of {n} samples leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let picked: std::collections::BTreeSet<usize> =
        order[..n_train].iter().copied().collect();
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (i, sample) in samples.into_iter().enumerate() {
        if picked.contains(&i) {
            train.push(sample);
        } else {
            test.push(sample);
        }
    }
    Ok((train, test))
}
