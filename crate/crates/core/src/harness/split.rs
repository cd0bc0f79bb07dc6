//! Random train/test splits and k-fold partitions.

use rand::seq::SliceRandom;

use crate::data::{Dataset, GroupedDataset};
use crate::error::{DroError, Result};
use crate::rng::RngHandle;

/// Fold membership: a random permutation of `0..n` dealt round-robin into `k`
/// folds, so fold sizes differ by at most one. Each fold is sorted.
pub fn kfold_indices(n: usize, k: usize, rng: RngHandle) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(DroError::invalid(format!("k-fold split needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(DroError::invalid(format!("cannot split {n} rows into {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng.rng());
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in perm.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    fold.iter().for_each(|&i| mask[i] = false);
    (0..n).filter(|&i| mask[i]).collect()
}

/// `(train, validation)` pairs, one per fold.
pub fn kfold_split(ds: &Dataset, k: usize, rng: RngHandle) -> Result<Vec<(Dataset, Dataset)>> {
    let folds = kfold_indices(ds.len(), k, rng)?;
    Ok(folds
        .iter()
        .map(|f| (ds.subset(&complement(ds.len(), f)), ds.subset(f)))
        .collect())
}

/// Every group is split into `k` folds on its own; fold `f` of the grouped
/// data collects fold `f` of every group.
pub fn grouped_kfold_split(
    data: &GroupedDataset,
    k: usize,
    rng: RngHandle,
) -> Result<Vec<(GroupedDataset, GroupedDataset)>> {
    let per_group = data
        .groups()
        .iter()
        .enumerate()
        .map(|(s, g)| kfold_split(g, k, rng.substream(s as u64)))
        .collect::<Result<Vec<_>>>()?;
    (0..k)
        .map(|f| {
            let train = per_group.iter().map(|p| p[f].0.clone()).collect();
            let valid = per_group.iter().map(|p| p[f].1.clone()).collect();
            Ok((
                GroupedDataset::with_labels(train, data.labels().to_vec())?,
                GroupedDataset::with_labels(valid, data.labels().to_vec())?,
            ))
        })
        .collect()
}

/// Random `(train, test)` split with `test_size` test rows.
pub fn train_test_split(ds: &Dataset, test_size: usize, rng: RngHandle) -> Result<(Dataset, Dataset)> {
    if test_size == 0 || test_size >= ds.len() {
        return Err(DroError::invalid(format!(
            "test size {test_size} must lie strictly between 0 and the {} available rows",
            ds.len()
        )));
    }
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    perm.shuffle(&mut rng.rng());
    let (test, train) = perm.split_at_mut(test_size);
    test.sort_unstable();
    train.sort_unstable();
    Ok((ds.subset(train), ds.subset(test)))
}

/// Split each group, holding out a share of `test_size` proportional to its size
/// (at least one row per group).
pub fn grouped_train_test_split(
    data: &GroupedDataset,
    test_size: usize,
    rng: RngHandle,
) -> Result<(GroupedDataset, GroupedDataset)> {
    let total = data.total_len() as f64;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (s, g) in data.groups().iter().enumerate() {
        let share = ((test_size as f64 * g.len() as f64 / total).round() as usize).max(1);
        let (tr, te) = train_test_split(g, share, rng.substream(s as u64))?;
        train.push(tr);
        test.push(te);
    }
    Ok((
        GroupedDataset::with_labels(train, data.labels().to_vec())?,
        GroupedDataset::with_labels(test, data.labels().to_vec())?,
    ))
}

/// First `n_first` rows of every group versus the rest.
pub fn split_head(data: &GroupedDataset, n_first: usize) -> Result<(GroupedDataset, GroupedDataset)> {
    let head = data
        .groups()
        .iter()
        .map(|g| g.subset(&(0..n_first.min(g.len())).collect::<Vec<_>>()))
        .collect();
    let tail = data
        .groups()
        .iter()
        .map(|g| g.subset(&(n_first.min(g.len())..g.len()).collect::<Vec<_>>()))
        .collect();
    Ok((
        GroupedDataset::with_labels(head, data.labels().to_vec())?,
        GroupedDataset::with_labels(tail, data.labels().to_vec())?,
    ))
}
