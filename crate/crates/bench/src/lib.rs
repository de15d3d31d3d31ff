//! Shared fixtures for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srgformer_core::dataio::{split_dataset, InteractionRecord, ModalFeatureTable};
use srgformer_core::{DenseMatrix, InteractionDataset, TrainConfig};

/// Synthetic dataset with roughly `per_user` interactions per user.
pub fn synthetic_dataset(users: usize, items: usize, per_user: usize, seed: u64) -> InteractionDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::new();
    for u in 0..users {
        while records.iter().filter(|r: &&InteractionRecord| r.user == u).count() < per_user {
            let item = rng.gen_range(0..items);
            if seen.insert((u, item)) {
                records.push(InteractionRecord {
                    user: u,
                    item,
                    timestamp: Some(records.len() as i64),
                });
            }
        }
    }
    split_dataset(&records, users, items, (8, 1, 1), seed).unwrap()
}

pub fn synthetic_features(items: usize, dim: usize, tag: &str, seed: u64) -> ModalFeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..items * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ModalFeatureTable {
        modality: tag.to_string(),
        features: DenseMatrix::from_values(items, dim, values).unwrap(),
    }
}

pub fn bench_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.embedding_dim = 16;
    cfg.heads = 2;
    cfg.hyperedges = 8;
    cfg.batch_size = 128;
    cfg
}
