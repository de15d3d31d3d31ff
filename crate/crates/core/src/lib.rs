//! Multimodal graph recommender: collaborative propagation, learnable
//! hypergraph structure, interaction-masked multi-head attention, and a
//! joint BPR + contrastive objective, built on a small reverse-mode tape.

pub mod attention;
pub mod autodiff;
pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod hypergraph;
pub mod model;
pub mod trainer;

pub use autodiff::{AdamState, DenseMatrix, Gradients, SparseMatrix, Tape, Var};
pub use config::{AblationFlags, TrainConfig};
pub use dataio::{
    build_normalized_adjacency, load_interactions, load_modal_features, sample_bpr_triples,
    save_modal_features, split_dataset, BprTriple, IdMap, InteractionDataset, InteractionRecord,
    ModalFeatureTable, NormalizedAdjacency, SplitManifest,
};
pub use error::{Error, Result};
pub use eval::{evaluate_topn, ndcg_at_n, rank_items, recall_at_n, EvalReport};
pub use model::{ModelDims, ModelState};
pub use trainer::{fit, train_epoch, ForwardMode, PreparedGraph, TrainReport};
