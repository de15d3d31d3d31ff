//! Top-n ranking metrics over the full catalog with train items masked out.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::DenseMatrix;
use crate::dataio::InteractionDataset;
use crate::error::{Error, Result};
use crate::trainer;

/// Rank all items for one user by inner-product score, excluding the given
/// items (the user's train history). Ties break toward the lower item id,
/// so rankings are deterministic.
pub fn rank_items(
    e_star: &DenseMatrix,
    user_count: usize,
    item_count: usize,
    user: usize,
    exclude: &[usize],
) -> Result<Vec<usize>> {
    let excluded: HashSet<usize> = exclude.iter().copied().collect();
    let candidates: Vec<usize> = (0..item_count).filter(|i| !excluded.contains(i)).collect();
    let scores = trainer::predict_scores(e_star, user_count, user, &candidates)?;
    for (&i, &s) in candidates.iter().zip(&scores) {
        if !s.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite score for user {user}, item {i}"
            )));
        }
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(candidates[a].cmp(&candidates[b]))
    });
    Ok(order.into_iter().map(|i| candidates[i]).collect())
}

/// |top-n ∩ relevant| / |relevant|. Zero when the user has no relevant items.
pub fn recall_at_n(ranked: &[usize], relevant: &[usize], n: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let rel: HashSet<usize> = relevant.iter().copied().collect();
    let hits = ranked.iter().take(n).filter(|i| rel.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-gain NDCG. The ideal DCG places all relevant items first and is
/// truncated at min(n, |relevant|).
pub fn ndcg_at_n(ranked: &[usize], relevant: &[usize], n: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let rel: HashSet<usize> = relevant.iter().copied().collect();
    let dcg: f64 = ranked
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| rel.contains(i))
        .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..n.min(relevant.len()))
        .map(|pos| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    dcg / ideal
}

/// Mean Recall@n over users that have held-out items.
pub fn mean_recall_at_n(
    e_star: &DenseMatrix,
    ds: &InteractionDataset,
    items_by_user: &[Vec<usize>],
    n: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut users = 0usize;
    for (u, relevant) in items_by_user.iter().enumerate() {
        if relevant.is_empty() {
            continue;
        }
        let ranked = rank_items(
            e_star,
            ds.user_count,
            ds.item_count,
            u,
            &ds.train_neighbors[u],
        )?;
        total += recall_at_n(&ranked, relevant, n);
        users += 1;
    }
    if users == 0 {
        return Err(Error::Data("no users with held-out items".into()));
    }
    Ok(total / users as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at_10: f64,
    pub recall_at_20: f64,
    pub ndcg_at_10: f64,
    pub ndcg_at_20: f64,
    pub evaluated_users: usize,
}

/// Mean Recall@{10,20} and NDCG@{10,20} over the given held-out partition.
pub fn evaluate_topn(
    e_star: &DenseMatrix,
    ds: &InteractionDataset,
    items_by_user: &[Vec<usize>],
) -> Result<EvalReport> {
    let mut sums = [0.0f64; 4];
    let mut users = 0usize;
    for (u, relevant) in items_by_user.iter().enumerate() {
        if relevant.is_empty() {
            continue;
        }
        let ranked = rank_items(
            e_star,
            ds.user_count,
            ds.item_count,
            u,
            &ds.train_neighbors[u],
        )?;
        sums[0] += recall_at_n(&ranked, relevant, 10);
        sums[1] += recall_at_n(&ranked, relevant, 20);
        sums[2] += ndcg_at_n(&ranked, relevant, 10);
        sums[3] += ndcg_at_n(&ranked, relevant, 20);
        users += 1;
    }
    if users == 0 {
        return Err(Error::Data("no users with held-out items".into()));
    }
    let n = users as f64;
    Ok(EvalReport {
        recall_at_10: sums[0] / n,
        recall_at_20: sums[1] / n,
        ndcg_at_10: sums[2] / n,
        ndcg_at_20: sums[3] / n,
        evaluated_users: users,
    })
}
