//! Interaction-log ingestion, splits, normalized adjacency, negative
//! sampling, and masked dataset variants.

pub mod features;

pub use features::{load_modal_features, save_modal_features, ModalFeatureTable};

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: usize,
    pub item: usize,
    pub timestamp: Option<i64>,
}

/// Raw-id ↔ dense-index map, in first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct IdMap {
    pub labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.labels.len();
        self.labels.push(raw.to_string());
        self.index.insert(raw.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for label in &self.labels {
            writeln!(f, "{label}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<IdMap> {
        let mut map = IdMap::default();
        for line in BufReader::new(std::fs::File::open(path)?).lines() {
            map.intern(line?.trim_end());
        }
        Ok(map)
    }
}

#[derive(Debug, Clone)]
pub struct InteractionDataset {
    pub user_count: usize,
    pub item_count: usize,
    pub train: Vec<InteractionRecord>,
    pub val: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
    /// Per-user sorted train item lists (N_u).
    pub train_neighbors: Vec<Vec<usize>>,
}

impl InteractionDataset {
    pub fn from_partitions(
        user_count: usize,
        item_count: usize,
        train: Vec<InteractionRecord>,
        val: Vec<InteractionRecord>,
        test: Vec<InteractionRecord>,
    ) -> Self {
        let mut neighbors = vec![Vec::new(); user_count];
        for r in &train {
            neighbors[r.user].push(r.item);
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        InteractionDataset {
            user_count,
            item_count,
            train,
            val,
            test,
            train_neighbors: neighbors,
        }
    }

    pub fn interaction_count(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.interaction_count() as f64 / (self.user_count as f64 * self.item_count as f64)
    }

    /// Per-user test item sets (deduplicated).
    pub fn test_items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.user_count];
        for r in &self.test {
            out[r.user].push(r.item);
        }
        for v in &mut out {
            v.sort_unstable();
            v.dedup();
        }
        out
    }

    pub fn val_items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.user_count];
        for r in &self.val {
            out[r.user].push(r.item);
        }
        for v in &mut out {
            v.sort_unstable();
            v.dedup();
        }
        out
    }
}

/// Parse a TSV interaction log: `user<TAB>item[<TAB>unix_timestamp]`.
/// Ids are re-indexed densely in first-appearance order; duplicate (u,i)
/// pairs collapse to one record keeping the earliest timestamp.
pub fn load_interactions(
    path: &Path,
) -> Result<(Vec<InteractionRecord>, IdMap, IdMap)> {
    let file = std::fs::File::open(path)?;
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut records: Vec<InteractionRecord> = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();

    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (u_raw, i_raw) = match (parts.next(), parts.next()) {
            (Some(u), Some(i)) if !u.is_empty() && !i.is_empty() => (u, i),
            _ => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: "expected user<TAB>item[<TAB>timestamp]".into(),
                })
            }
        };
        let timestamp = match parts.next() {
            Some(t) if !t.is_empty() => {
                Some(t.parse::<i64>().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad timestamp {t:?}"),
                })?)
            }
            _ => None,
        };
        let user = users.intern(u_raw);
        let item = items.intern(i_raw);
        match seen.get(&(user, item)) {
            Some(&pos) => {
                // dedup keeping the earliest timestamp
                let prev = &mut records[pos];
                prev.timestamp = match (prev.timestamp, timestamp) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
            }
            None => {
                seen.insert((user, item), records.len());
                records.push(InteractionRecord {
                    user,
                    item,
                    timestamp,
                });
            }
        }
    }
    Ok((records, users, items))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: (u32, u32, u32),
    pub user_count: usize,
    pub item_count: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub user_map_file: String,
    pub item_map_file: String,
}

/// Per-user random partition with the given ratios. Counts are floored
/// quotas; leftover records go to train, then test, then val, so small
/// histories keep at least one train record.
pub fn split_dataset(
    records: &[InteractionRecord],
    user_count: usize,
    item_count: usize,
    ratios: (u32, u32, u32),
    seed: u64,
) -> Result<InteractionDataset> {
    if records.is_empty() {
        return Err(Error::Data("split_dataset: empty input".into()));
    }
    let total = (ratios.0 + ratios.1 + ratios.2) as usize;
    if total == 0 || ratios.0 == 0 {
        return Err(Error::Config("split ratios must give train a share".into()));
    }
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); user_count];
    for (i, r) in records.iter().enumerate() {
        per_user[r.user].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for idxs in per_user.iter_mut() {
        if idxs.is_empty() {
            continue;
        }
        idxs.shuffle(&mut rng);
        let n = idxs.len();
        // floored val/test quotas; train absorbs the remainder, so every
        // user keeps at least one train record
        let n_val = n * ratios.1 as usize / total;
        let n_test = n * ratios.2 as usize / total;
        let n_train = n - n_val - n_test;
        for (pos, &ri) in idxs.iter().enumerate() {
            let rec = records[ri];
            if pos < n_train {
                train.push(rec);
            } else if pos < n_train + n_val {
                val.push(rec);
            } else {
                test.push(rec);
            }
        }
    }
    Ok(InteractionDataset::from_partitions(
        user_count, item_count, train, val, test,
    ))
}

/// Symmetric-normalized bipartite adjacency built from train interactions.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    /// (|U|+|I|)×(|U|+|I|), weight 1/√(deg u · deg i) per edge, zero diagonal.
    pub matrix: SparseMatrix,
    /// |U|×|I| user-block slice with the same weights.
    pub user_block: SparseMatrix,
}

pub fn build_normalized_adjacency(ds: &InteractionDataset) -> Result<NormalizedAdjacency> {
    if ds.train.is_empty() {
        return Err(Error::Data("empty train partition".into()));
    }
    let n = ds.user_count + ds.item_count;
    let mut deg = vec![0usize; n];
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(ds.train.len());
    for (u, items) in ds.train_neighbors.iter().enumerate() {
        for &i in items {
            deg[u] += 1;
            deg[ds.user_count + i] += 1;
            edges.push((u, i));
        }
    }
    let mut full = Vec::with_capacity(edges.len() * 2);
    let mut block = Vec::with_capacity(edges.len());
    for (u, i) in edges {
        let w = 1.0 / ((deg[u] * deg[ds.user_count + i]) as f64).sqrt();
        full.push((u, ds.user_count + i, w));
        full.push((ds.user_count + i, u, w));
        block.push((u, i, w));
    }
    Ok(NormalizedAdjacency {
        matrix: SparseMatrix::from_triplets(n, n, full)?,
        user_block: SparseMatrix::from_triplets(ds.user_count, ds.item_count, block)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Uniform positive over the user's train items, uniform rejection-sampled
/// negative over the non-interacted catalog. Users who interacted with the
/// whole catalog are skipped with a warning.
pub fn sample_bpr_triples(
    ds: &InteractionDataset,
    count: usize,
    seed: u64,
) -> Vec<BprTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eligible: Vec<usize> = (0..ds.user_count)
        .filter(|&u| {
            let n = ds.train_neighbors[u].len();
            n > 0 && n < ds.item_count
        })
        .collect();
    let skipped = (0..ds.user_count)
        .filter(|&u| {
            !ds.train_neighbors[u].is_empty() && ds.train_neighbors[u].len() >= ds.item_count
        })
        .count();
    if skipped > 0 {
        eprintln!("warning: {skipped} user(s) interacted with every item; skipped in sampling");
    }
    let mut out = Vec::with_capacity(count);
    if eligible.is_empty() {
        return out;
    }
    while out.len() < count {
        let user = eligible[rng.gen_range(0..eligible.len())];
        let items = &ds.train_neighbors[user];
        let pos = items[rng.gen_range(0..items.len())];
        let neg = loop {
            let cand = rng.gen_range(0..ds.item_count);
            if items.binary_search(&cand).is_err() {
                break cand;
            }
        };
        out.push(BprTriple { user, pos, neg });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Remove each user's k most recent train records (RBM-style).
    RecentK,
    /// Keep only each user's L most recent train records (LHM-style).
    KeepLastL,
}

/// Masked dataset variant over the train partition; val/test untouched.
/// Every user keeps at least one train record.
pub fn mask_dataset(
    ds: &InteractionDataset,
    mode: MaskMode,
    k_or_l: usize,
) -> Result<InteractionDataset> {
    if ds.train.iter().any(|r| r.timestamp.is_none()) {
        return Err(Error::Data(
            "mask_dataset requires timestamps on all train records".into(),
        ));
    }
    let mut per_user: Vec<Vec<InteractionRecord>> = vec![Vec::new(); ds.user_count];
    for r in &ds.train {
        per_user[r.user].push(*r);
    }
    let mut train = Vec::new();
    for recs in per_user.iter_mut() {
        if recs.is_empty() {
            continue;
        }
        // oldest first; item id tie-break keeps masking deterministic
        recs.sort_by_key(|r| (r.timestamp.unwrap(), r.item));
        let n = recs.len();
        let keep: &[InteractionRecord] = match mode {
            MaskMode::RecentK => {
                let kept = n.saturating_sub(k_or_l).max(1);
                &recs[..kept]
            }
            MaskMode::KeepLastL => {
                let kept = k_or_l.clamp(1, n);
                &recs[n - kept..]
            }
        };
        train.extend_from_slice(keep);
    }
    Ok(InteractionDataset::from_partitions(
        ds.user_count,
        ds.item_count,
        train,
        ds.val.clone(),
        ds.test.clone(),
    ))
}
