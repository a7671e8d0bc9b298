use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::BagDataset;
use crate::{seed, Error, Result};

/// One replication: disjoint train and test bag ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// 1-based.
    pub replication_id: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

/// Shuffles the bag ids under `seed` and cuts `n_reps` consecutive,
/// non-overlapping train/test blocks.
pub fn split_dataset(
    dataset: &BagDataset,
    n_reps: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<Vec<SplitPlan>> {
    let need = n_reps * (n_train + n_test);
    if need > dataset.len() {
        return Err(Error::domain(format!(
            "{n_reps} replications of {n_train}+{n_test} bags need {need}, dataset has {}",
            dataset.len()
        )));
    }
    let mut ids: Vec<String> = dataset.bags().iter().map(|b| b.id.clone()).collect();
    ids.shuffle(&mut seed::rng(seed::derive_str(seed, "split")));
    let block = n_train + n_test;
    Ok((0..n_reps)
        .map(|r| {
            let chunk = &ids[r * block..(r + 1) * block];
            SplitPlan {
                replication_id: r + 1,
                train_ids: chunk[..n_train].to_vec(),
                test_ids: chunk[n_train..].to_vec(),
                seed,
            }
        })
        .collect())
}
