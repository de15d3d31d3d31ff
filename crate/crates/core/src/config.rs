//! Training configuration, named per-dataset presets, and config digests.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Structural ablation switches. Each flag only removes a term or a
/// parameter group; all flags together degrade the model to plain
/// propagation + BPR.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Drop the multi-head attention (global structure) path.
    pub no_global: bool,
    /// Drop the cross-modal contrastive task (γ := 0).
    pub no_mcl: bool,
    /// Drop the visual modality everywhere.
    pub no_visual: bool,
    /// Drop the textual modality everywhere.
    pub no_textual: bool,
    /// Drop the hypergraph (local structure) path and set β := 0.
    pub no_hypergraph: bool,
}

impl AblationFlags {
    /// Canonical tag used in reports: "full", "w/GT", "w/MCL", "w/v", "w/t", "w/h".
    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        if self.no_global {
            parts.push("w/GT");
        }
        if self.no_mcl {
            parts.push("w/MCL");
        }
        if self.no_visual {
            parts.push("w/v");
        }
        if self.no_textual {
            parts.push("w/t");
        }
        if self.no_hypergraph {
            parts.push("w/h");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }

    pub fn parse_variant(s: &str) -> Result<AblationFlags> {
        let mut f = AblationFlags::default();
        for part in s.split('+') {
            match part.trim() {
                "full" | "" => {}
                "w/GT" => f.no_global = true,
                "w/MCL" => f.no_mcl = true,
                "w/v" => f.no_visual = true,
                "w/t" => f.no_textual = true,
                "w/h" => f.no_hypergraph = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown ablation variant {other:?} (expected w/GT, w/MCL, w/v, w/t, w/h)"
                    )))
                }
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Embedding dimension d.
    pub embedding_dim: usize,
    /// Collaborative propagation layers S.
    pub gcn_layers: usize,
    /// Modal propagation layers K.
    pub modal_layers: usize,
    /// Hyperedge count A per modality.
    pub hyperedges: usize,
    /// Hypergraph message-passing depth.
    pub hypergraph_layers: usize,
    /// Attention heads.
    pub heads: usize,
    /// Global-structure fusion weight α.
    pub alpha: f64,
    /// Local-structure fusion weight β.
    pub beta: f64,
    /// Cross-modal contrastive weight γ.
    pub gamma: f64,
    /// BPR l2 regularization λ1.
    pub lambda1: f64,
    /// Hypergraph contrastive weight λ2.
    pub lambda2: f64,
    /// Contrastive temperature τ.
    pub tau: f64,
    /// Gumbel-Softmax temperature.
    pub tau_gumbel: f64,
    /// Dropout probability on relaxed dependency matrices.
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Early-stop patience in epochs of no val R@20 improvement.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Use full dense attention instead of interaction-masked attention.
    pub dense_attention: bool,
    /// Cross-pair denominator for the contrastive losses instead of the
    /// printed positive-pair form.
    pub in_batch_negatives: bool,
    /// Rank on −ln σ(r̂⁺ + r̂⁻) instead of the usual score difference.
    pub bpr_sum_scores: bool,
    pub ablation: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_dim: 64,
            gcn_layers: 2,
            modal_layers: 1,
            hyperedges: 16,
            hypergraph_layers: 2,
            heads: 4,
            alpha: 0.1,
            beta: 0.3,
            gamma: 1e-6,
            lambda1: 1e-4,
            lambda2: 1e-3,
            tau: 0.2,
            tau_gumbel: 0.2,
            dropout: 0.2,
            learning_rate: 1e-3,
            batch_size: 2048,
            patience: 20,
            max_epochs: 1000,
            seed: 2024,
            dense_attention: false,
            in_batch_negatives: false,
            bpr_sum_scores: false,
            ablation: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    /// Per-dataset published settings, loadable by name.
    pub fn preset(name: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        match name {
            "baby" => {
                cfg.heads = 4;
                cfg.alpha = 0.1;
                cfg.beta = 0.3;
                cfg.gamma = 1e-6;
            }
            "sports" => {
                cfg.heads = 4;
                cfg.alpha = 0.6;
                cfg.beta = 0.3;
                cfg.gamma = 1e-6;
            }
            "clothing" => {
                cfg.heads = 4;
                cfg.alpha = 0.2;
                cfg.beta = 0.4;
                cfg.gamma = 1e-6;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?} (expected baby, sports, clothing)"
                )))
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.heads == 0 {
            return Err(Error::Config("embedding_dim and heads must be positive".into()));
        }
        if self.embedding_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embedding_dim {} not divisible by heads {}",
                self.embedding_dim, self.heads
            )));
        }
        if self.tau <= 0.0 || self.tau_gumbel <= 0.0 {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0,1)".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config("alpha and beta must be in [0,1]".into()));
        }
        if self.learning_rate <= 0.0 || self.batch_size == 0 || self.hyperedges == 0 {
            return Err(Error::Config(
                "learning_rate, batch_size, hyperedges must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Hex digest of the canonical JSON form; ties checkpoints and reports
    /// to the exact configuration that produced them.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("bad config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Active modalities after ablation, in canonical order.
    pub fn modalities(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.ablation.no_visual {
            out.push("visual");
        }
        if !self.ablation.no_textual {
            out.push("textual");
        }
        out
    }
}
