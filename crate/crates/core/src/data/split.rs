use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

pub const N_SPLITS: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Nine independent random 80/20 partitions of `0..n_rows`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub seed: u64,
    pub n_rows: usize,
    pub splits: Vec<Split>,
}

impl SplitPlan {
    pub fn train_size(n_rows: usize) -> usize {
        // floor(0.8 n) without floating point
        4 * n_rows / 5
    }
}

/// Split `k` shuffles `0..n_rows` with a ChaCha8 generator seeded by
/// `seed + k`, then takes the first `floor(0.8 n)` indices for training.
/// Index lists are returned sorted.
pub fn make_splits(n_rows: usize, seed: u64) -> Result<SplitPlan, DataError> {
    if n_rows < 5 {
        return Err(DataError::DatasetTooSmall(n_rows));
    }
    let n_train = SplitPlan::train_size(n_rows);
    let splits = (0..N_SPLITS as u64)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k));
            let mut idx: Vec<usize> = (0..n_rows).collect();
            idx.shuffle(&mut rng);
            let mut train = idx[..n_train].to_vec();
            let mut validation = idx[n_train..].to_vec();
            train.sort_unstable();
            validation.sort_unstable();
            Split { train, validation }
        })
        .collect();
    Ok(SplitPlan { seed, n_rows, splits })
}
