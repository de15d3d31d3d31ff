//! Property tests for the structural invariants the rest of the crate
//! relies on.

use std::collections::HashSet;

use proptest::prelude::*;

use srgformer_core::dataio::{build_normalized_adjacency, split_dataset, InteractionRecord};
use srgformer_core::hypergraph;
use srgformer_core::model::{ModelDims, ModelState};
use srgformer_core::{eval, DenseMatrix, Tape, TrainConfig};

fn finite_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    proptest::collection::vec(-50.0f64..50.0, rows * cols)
        .prop_map(move |v| DenseMatrix::from_values(rows, cols, v).unwrap())
}

fn bipartite_edges() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize)>)> {
    (2usize..8, 2usize..8).prop_flat_map(|(users, items)| {
        proptest::collection::hash_set((0..users, 0..items), 1..users * items).prop_map(
            move |edges| (users, items, edges.into_iter().collect::<Vec<_>>()),
        )
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(m in finite_matrix(3, 5)) {
        let s = m.softmax_rows().unwrap();
        for r in 0..s.rows {
            let sum: f64 = s.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(s.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn normalized_rows_have_unit_or_zero_norm(m in finite_matrix(4, 3)) {
        let n = m.l2_normalize_rows();
        for r in 0..n.rows {
            let norm: f64 = n.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm < 1e-12 || (norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn adjacency_weights_invert_degree_products((users, items, edges) in bipartite_edges()) {
        let records: Vec<InteractionRecord> = edges
            .iter()
            .map(|&(u, i)| InteractionRecord { user: u, item: i, timestamp: None })
            .collect();
        let ds = split_dataset(&records, users, items, (1, 0, 0), 0).unwrap();
        let adj = build_normalized_adjacency(&ds).unwrap();
        let mut deg = vec![0usize; users + items];
        for &(u, i) in &edges {
            deg[u] += 1;
            deg[users + i] += 1;
        }
        for r in 0..users + items {
            for (c, w) in adj.matrix.row_entries(r) {
                prop_assert!((w * w * (deg[r] * deg[c]) as f64 - 1.0).abs() < 1e-12);
            }
        }
        // the matrix is symmetric and purely bipartite
        let d = adj.matrix.to_dense();
        for r in 0..users + items {
            for c in 0..users + items {
                prop_assert!((d.get(r, c) - d.get(c, r)).abs() < 1e-15);
                let same_side = (r < users) == (c < users);
                if same_side {
                    prop_assert!(d.get(r, c) == 0.0);
                }
            }
        }
    }

    #[test]
    fn split_partitions_are_disjoint_and_exhaustive(
        (users, items, edges) in bipartite_edges(),
        seed in 0u64..1000,
    ) {
        let records: Vec<InteractionRecord> = edges
            .iter()
            .map(|&(u, i)| InteractionRecord { user: u, item: i, timestamp: None })
            .collect();
        let ds = split_dataset(&records, users, items, (8, 1, 1), seed).unwrap();
        let key = |r: &InteractionRecord| (r.user, r.item);
        let train: HashSet<_> = ds.train.iter().map(key).collect();
        let val: HashSet<_> = ds.val.iter().map(key).collect();
        let test: HashSet<_> = ds.test.iter().map(key).collect();
        prop_assert!(train.is_disjoint(&val));
        prop_assert!(train.is_disjoint(&test));
        prop_assert!(val.is_disjoint(&test));
        prop_assert_eq!(train.len() + val.len() + test.len(), edges.len());
        // every interacting user keeps a train record
        for u in 0..users {
            if edges.iter().any(|&(eu, _)| eu == u) {
                prop_assert!(!ds.train_neighbors[u].is_empty());
            }
        }
    }

    #[test]
    fn metrics_are_bounded_and_recall_is_monotone(
        perm in proptest::sample::subsequence((0..30usize).collect::<Vec<_>>(), 5..30),
        relevant in proptest::collection::hash_set(0usize..30, 1..8),
    ) {
        let relevant: Vec<usize> = relevant.into_iter().collect();
        let mut last = 0.0;
        for n in 1..=perm.len() {
            let r = eval::recall_at_n(&perm, &relevant, n);
            let g = eval::ndcg_at_n(&perm, &relevant, n);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((0.0..=1.0).contains(&g));
            prop_assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn relaxed_rows_stay_on_the_simplex(
        m in finite_matrix(3, 4),
        tau in 0.05f64..2.0,
    ) {
        let mut tape = Tape::new();
        let l = tape.leaf(m);
        let g = hypergraph::gumbel_softmax_rows(&mut tape, l, tau, None).unwrap();
        for r in 0..3 {
            let sum: f64 = tape.value(g).row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_stable(seed in 0u64..500) {
        let mut cfg = TrainConfig::default();
        cfg.embedding_dim = 8;
        cfg.heads = 2;
        cfg.hyperedges = 3;
        let dims = ModelDims {
            user_count: 3,
            item_count: 4,
            modal_dims: vec![("visual".into(), 5), ("textual".into(), 2)],
        };
        let state = ModelState::new(&cfg, &dims, seed).unwrap();
        let bytes = state.to_bytes("digest", true);
        let (loaded, _) = ModelState::from_bytes(&bytes).unwrap();
        prop_assert_eq!(loaded.to_bytes("digest", true), bytes);
    }
}
