//! Full forward pass, joint objective, Adam training loop with early
//! stopping, and scoring.

use std::collections::HashMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, AttentionMode, HeadParams};
use crate::autodiff::{DenseMatrix, SparseMatrix, Tape, Var};
use crate::config::TrainConfig;
use crate::dataio::{self, InteractionDataset, ModalFeatureTable};
use crate::error::{Error, Result};
use crate::gcn;
use crate::hypergraph;
use crate::model::ModelState;

/// Graph-side inputs shared by every forward pass; immutable after prepare.
pub struct PreparedGraph {
    pub adjacency: Rc<SparseMatrix>,
    pub user_block: Rc<SparseMatrix>,
    /// Transposed interaction pattern for item-over-user attention masking.
    pub item_block: Rc<SparseMatrix>,
    pub neighbor_mean: Rc<SparseMatrix>,
    pub user_count: usize,
    pub item_count: usize,
    /// (tag, raw |I|×d_m feature matrix) for each active modality.
    pub modal_features: Vec<(String, DenseMatrix)>,
}

impl PreparedGraph {
    pub fn build(
        ds: &InteractionDataset,
        features: &[ModalFeatureTable],
        cfg: &TrainConfig,
    ) -> Result<PreparedGraph> {
        let adj = dataio::build_normalized_adjacency(ds)?;
        let mut modal_features = Vec::new();
        for tag in cfg.modalities() {
            let table = features
                .iter()
                .find(|t| t.modality == tag)
                .ok_or_else(|| Error::Data(format!("missing {tag} feature table")))?;
            if table.features.rows != ds.item_count {
                return Err(Error::Data(format!(
                    "{tag} features have {} rows for {} items",
                    table.features.rows, ds.item_count
                )));
            }
            modal_features.push((tag.to_string(), table.features.clone()));
        }
        Ok(PreparedGraph {
            item_block: Rc::new(adj.user_block.transpose()),
            adjacency: Rc::new(adj.matrix),
            user_block: Rc::new(adj.user_block),
            neighbor_mean: gcn::neighbor_mean_matrix(ds)?,
            user_count: ds.user_count,
            item_count: ds.item_count,
            modal_features,
        })
    }

    pub fn modal_dims(&self) -> Vec<(String, usize)> {
        self.modal_features
            .iter()
            .map(|(tag, m)| (tag.clone(), m.cols))
            .collect()
    }
}

/// Train mode carries a step RNG for Gumbel noise and dropout; Eval uses
/// the noise-free δ=0.5 reduction and identity dropout.
pub enum ForwardMode {
    Train(ChaCha8Rng),
    Eval,
}

/// Everything a step needs from one forward construction.
pub struct ForwardPass {
    pub e_star: Var,
    pub e_lge: Var,
    pub mcl_user: Option<Var>,
    pub mcl_item: Option<Var>,
    pub hcl_user: Option<Var>,
    pub hcl_item: Option<Var>,
    /// Parameter leaves by group name, for gradient extraction and l2.
    pub param_vars: HashMap<String, Var>,
}

/// Build the model forward graph per the configured structure and ablations.
pub fn forward(
    tape: &mut Tape,
    state: &ModelState,
    graph: &PreparedGraph,
    cfg: &TrainConfig,
    mode: &mut ForwardMode,
) -> Result<ForwardPass> {
    let mut param_vars = HashMap::new();
    for (name, p) in state.names.iter().zip(&state.params) {
        param_vars.insert(name.clone(), tape.leaf(p.clone()));
    }
    let id = *param_vars
        .get("id_embeddings")
        .ok_or_else(|| Error::Contract("model has no id embeddings".into()))?;

    // collaborative propagation, mean layer combination
    let mut layers = vec![id];
    for _ in 0..cfg.gcn_layers {
        let next = gcn::cgprop(tape, &graph.adjacency, *layers.last().unwrap())?;
        layers.push(next);
    }
    let e_lge = gcn::layer_combine(tape, &layers)?;

    // modal propagation stacks
    let mut modal_tops: Vec<(String, Var)> = Vec::new();
    let want_mcl = !cfg.ablation.no_mcl && graph.modal_features.len() >= 2;
    if want_mcl {
        for (tag, raw) in &graph.modal_features {
            let raw_leaf = tape.leaf(raw.clone());
            let w_m = *param_vars
                .get(&format!("proj_{tag}"))
                .ok_or_else(|| Error::Contract(format!("missing proj_{tag}")))?;
            let projected = gcn::transform_modal(tape, raw_leaf, w_m)?;
            let user_rows = gcn::init_user_modal(tape, &graph.neighbor_mean, projected)?;
            let mut modal = tape.concat_rows(user_rows, projected)?;
            for _ in 0..cfg.modal_layers {
                modal = gcn::mgprop(tape, &graph.adjacency, modal)?;
            }
            modal_tops.push((tag.clone(), modal));
        }
    }
    let (mcl_user, mcl_item) = if want_mcl {
        let a = modal_tops[0].1;
        let b = modal_tops[1].1;
        let au = tape.slice_rows(a, 0, graph.user_count)?;
        let bu = tape.slice_rows(b, 0, graph.user_count)?;
        let ai = tape.slice_rows(a, graph.user_count, graph.item_count)?;
        let bi = tape.slice_rows(b, graph.user_count, graph.item_count)?;
        (
            Some(gcn::mcl_loss(tape, au, bu, cfg.tau, cfg.in_batch_negatives)?),
            Some(gcn::mcl_loss(tape, ai, bi, cfg.tau, cfg.in_batch_negatives)?),
        )
    } else {
        (None, None)
    };

    // hypergraph local structure
    let mut e_ghe: Option<Var> = None;
    let mut hcl_user = None;
    let mut hcl_item = None;
    if !cfg.ablation.no_hypergraph && !graph.modal_features.is_empty() {
        let item_collab = tape.slice_rows(e_lge, graph.user_count, graph.item_count)?;
        let mut per_modality = Vec::new();
        let mut user_tops = Vec::new();
        let mut item_tops = Vec::new();
        for (tag, raw) in &graph.modal_features {
            let raw_leaf = tape.leaf(raw.clone());
            let v_m = *param_vars
                .get(&format!("hyperedges_{tag}"))
                .ok_or_else(|| Error::Contract(format!("missing hyperedges_{tag}")))?;
            let deps =
                hypergraph::hyperedge_dependencies(tape, raw_leaf, v_m, &graph.user_block)?;
            let (item_noise, user_noise) = match mode {
                ForwardMode::Train(rng) => (
                    Some(hypergraph::sample_logistic_noise(
                        graph.item_count,
                        cfg.hyperedges,
                        rng,
                    )),
                    Some(hypergraph::sample_logistic_noise(
                        graph.user_count,
                        cfg.hyperedges,
                        rng,
                    )),
                ),
                ForwardMode::Eval => (None, None),
            };
            let relaxed_items =
                hypergraph::gumbel_softmax_rows(tape, deps.items, cfg.tau_gumbel, item_noise.as_ref())?;
            let relaxed_users =
                hypergraph::gumbel_softmax_rows(tape, deps.users, cfg.tau_gumbel, user_noise.as_ref())?;

            let mut item_layer = item_collab;
            let mut user_layer = None;
            for _ in 0..cfg.hypergraph_layers {
                let masks = match mode {
                    ForwardMode::Train(rng) if cfg.dropout > 0.0 => {
                        let mi = hypergraph::dropout_mask(
                            graph.item_count,
                            cfg.hyperedges,
                            cfg.dropout,
                            rng,
                        );
                        let mt = hypergraph::dropout_mask(
                            cfg.hyperedges,
                            graph.item_count,
                            cfg.dropout,
                            rng,
                        );
                        let mu = hypergraph::dropout_mask(
                            graph.user_count,
                            cfg.hyperedges,
                            cfg.dropout,
                            rng,
                        );
                        let mt2 = hypergraph::dropout_mask(
                            cfg.hyperedges,
                            graph.item_count,
                            cfg.dropout,
                            rng,
                        );
                        Some((mi.unwrap(), mt.unwrap(), mu.unwrap(), mt2.unwrap()))
                    }
                    _ => None,
                };
                let (item_masks, user_masks) = match &masks {
                    Some((mi, mt, mu, mt2)) => (Some((mi, mt)), Some((mu, mt2))),
                    None => (None, None),
                };
                user_layer = Some(hypergraph::hypergraph_propagate_users(
                    tape,
                    relaxed_users,
                    relaxed_items,
                    item_layer,
                    user_masks,
                )?);
                item_layer = hypergraph::hypergraph_propagate_items(
                    tape,
                    relaxed_items,
                    item_layer,
                    item_masks,
                )?;
            }
            let user_top = user_layer
                .ok_or_else(|| Error::Config("hypergraph_layers must be ≥ 1".into()))?;
            per_modality.push((user_top, item_layer));
            user_tops.push(user_top);
            item_tops.push(item_layer);
        }
        e_ghe = Some(hypergraph::fuse_local(tape, &per_modality)?);
        if user_tops.len() >= 2 {
            hcl_user = Some(hypergraph::hcl_loss(tape, user_tops[0], user_tops[1], cfg.tau)?);
            hcl_item = Some(hypergraph::hcl_loss(tape, item_tops[0], item_tops[1], cfg.tau)?);
        }
    }

    // global attention structure
    let mut e_gt: Option<Var> = None;
    if !cfg.ablation.no_global {
        let head_count = cfg.heads;
        let mut heads = Vec::with_capacity(head_count);
        for h in 0..head_count {
            heads.push(HeadParams {
                w_q: param_vars[&format!("attn_q_{h}")],
                w_k: param_vars[&format!("attn_k_{h}")],
                w_v: param_vars[&format!("attn_v_{h}")],
            });
        }
        let user_rows = tape.slice_rows(e_lge, 0, graph.user_count)?;
        let item_rows = tape.slice_rows(e_lge, graph.user_count, graph.item_count)?;
        let (user_mode, item_mode) = if cfg.dense_attention {
            (AttentionMode::Dense, AttentionMode::Dense)
        } else {
            (
                AttentionMode::Masked(Rc::clone(&graph.user_block)),
                AttentionMode::Masked(Rc::clone(&graph.item_block)),
            )
        };
        let over_items =
            attention::multi_head_attention(tape, user_rows, item_rows, &heads, &user_mode)?;
        let over_users =
            attention::multi_head_attention(tape, item_rows, user_rows, &heads, &item_mode)?;
        e_gt = Some(attention::apply_global(
            tape,
            over_items.att,
            over_users.att,
            e_lge,
            graph.user_count,
        )?);
    }

    // structural fusion and final representation
    let e_star = match (e_gt, e_ghe) {
        (Some(gt), Some(ghe)) => {
            let e_str = attention::fuse_structural(tape, gt, ghe, cfg.alpha, cfg.beta)?;
            tape.add(e_lge, e_str)?
        }
        (Some(gt), None) => {
            let n = tape.l2_normalize_rows(gt);
            let s = tape.scale(n, cfg.alpha);
            tape.add(e_lge, s)?
        }
        (None, Some(ghe)) => {
            let n = tape.l2_normalize_rows(ghe);
            let s = tape.scale(n, cfg.beta);
            tape.add(e_lge, s)?
        }
        (None, None) => e_lge,
    };

    Ok(ForwardPass {
        e_star,
        e_lge,
        mcl_user,
        mcl_item,
        hcl_user,
        hcl_item,
        param_vars,
    })
}

/// Elementwise fusion of collaborative and structural embeddings.
pub fn final_embeddings(tape: &mut Tape, e_lge: Var, e_str: Var) -> Result<Var> {
    tape.add(e_lge, e_str)
}

/// −Σ ln σ(r̂⁺ − r̂⁻) + λ1‖Θ‖² over the batch. The regularizer covers the
/// ID-embedding rows touched by the batch plus the listed dense parameter
/// groups. `sum_scores` switches the margin to r̂⁺ + r̂⁻.
#[allow(clippy::too_many_arguments)]
pub fn bpr_loss(
    tape: &mut Tape,
    e_star: Var,
    id_embeddings: Var,
    user_count: usize,
    triples: &[dataio::BprTriple],
    lambda1: f64,
    dense_params: &[Var],
    sum_scores: bool,
) -> Result<Var> {
    if triples.is_empty() {
        return Err(Error::Contract("bpr_loss: empty batch".into()));
    }
    let users: Rc<Vec<usize>> = Rc::new(triples.iter().map(|t| t.user).collect());
    let pos: Rc<Vec<usize>> = Rc::new(triples.iter().map(|t| user_count + t.pos).collect());
    let neg: Rc<Vec<usize>> = Rc::new(triples.iter().map(|t| user_count + t.neg).collect());

    let eu = tape.gather_rows(e_star, Rc::clone(&users))?;
    let ep = tape.gather_rows(e_star, Rc::clone(&pos))?;
    let en = tape.gather_rows(e_star, Rc::clone(&neg))?;
    let pos_prod = tape.hadamard(eu, ep)?;
    let neg_prod = tape.hadamard(eu, en)?;
    let pos_scores = tape.row_sum(pos_prod);
    let neg_scores = tape.row_sum(neg_prod);
    let margin = if sum_scores {
        tape.add(pos_scores, neg_scores)?
    } else {
        tape.sub(pos_scores, neg_scores)?
    };
    let neg_margin = tape.scale(margin, -1.0);
    let per_triple = tape.softplus(neg_margin);
    let mut loss = tape.sum_all(per_triple);

    if lambda1 > 0.0 {
        let mut reg: Option<Var> = None;
        for idx in [&users, &pos, &neg] {
            let rows = tape.gather_rows(id_embeddings, Rc::clone(idx))?;
            let sq = tape.hadamard(rows, rows)?;
            let s = tape.sum_all(sq);
            reg = Some(match reg {
                Some(r) => tape.add(r, s)?,
                None => s,
            });
        }
        for &p in dense_params {
            let sq = tape.hadamard(p, p)?;
            let s = tape.sum_all(sq);
            reg = Some(match reg {
                Some(r) => tape.add(r, s)?,
                None => s,
            });
        }
        let scaled = tape.scale(reg.unwrap(), lambda1);
        loss = tape.add(loss, scaled)?;
    }
    Ok(loss)
}

/// L_BPR + λ2(L^u_HCL + L^i_HCL) + γ(L^u_MCL + L^i_MCL). Missing components
/// contribute nothing.
pub fn joint_loss(
    tape: &mut Tape,
    bpr: Var,
    hcl: (Option<Var>, Option<Var>),
    mcl: (Option<Var>, Option<Var>),
    lambda2: f64,
    gamma: f64,
) -> Result<Var> {
    let mut total = bpr;
    let add_weighted = |tape: &mut Tape, total: Var, terms: (Option<Var>, Option<Var>), w: f64| -> Result<Var> {
        if w == 0.0 {
            return Ok(total);
        }
        let mut acc = total;
        for term in [terms.0, terms.1].into_iter().flatten() {
            let scaled = tape.scale(term, w);
            acc = tape.add(acc, scaled)?;
        }
        Ok(acc)
    };
    total = add_weighted(tape, total, hcl, lambda2)?;
    total = add_weighted(tape, total, mcl, gamma)?;
    Ok(total)
}

/// Inner-product preference scores of one user over candidate items.
pub fn predict_scores(
    e_star: &DenseMatrix,
    user_count: usize,
    user: usize,
    candidates: &[usize],
) -> Result<Vec<f64>> {
    if user >= user_count {
        return Err(Error::Contract(format!("unknown user id {user}")));
    }
    let u_row = e_star.row(user);
    candidates
        .iter()
        .map(|&i| {
            if user_count + i >= e_star.rows {
                return Err(Error::Contract(format!("unknown item id {i}")));
            }
            Ok(u_row
                .iter()
                .zip(e_star.row(user_count + i))
                .map(|(a, b)| a * b)
                .sum())
        })
        .collect()
}

/// Evaluation-mode E* (noise-free, no dropout) as a plain matrix.
pub fn compute_final_embeddings(
    state: &ModelState,
    graph: &PreparedGraph,
    cfg: &TrainConfig,
) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let mut mode = ForwardMode::Eval;
    let pass = forward(&mut tape, state, graph, cfg, &mut mode)?;
    Ok(tape.value(pass.e_star).clone())
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct EpochLosses {
    pub bpr: f64,
    pub hcl: f64,
    pub mcl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<EpochLosses>,
    pub val_recall_trace: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub stop_reason: String,
}

fn step_rng(cfg: &TrainConfig, epoch: u64, batch: u64) -> ChaCha8Rng {
    let mix = cfg
        .seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(epoch.wrapping_mul(0x100000001b3))
        .wrapping_add(batch);
    ChaCha8Rng::seed_from_u64(mix)
}

/// One pass over sampled BPR batches; returns accumulated epoch losses.
pub fn train_epoch(
    state: &mut ModelState,
    ds: &InteractionDataset,
    graph: &PreparedGraph,
    cfg: &TrainConfig,
    epoch: u64,
) -> Result<EpochLosses> {
    let sample_seed = cfg
        .seed
        .wrapping_mul(0x517cc1b727220a95)
        .wrapping_add(epoch);
    let triples = dataio::sample_bpr_triples(ds, ds.train.len().max(1), sample_seed);
    if triples.is_empty() {
        return Err(Error::Data("no trainable users for BPR sampling".into()));
    }
    let mut totals = EpochLosses::default();
    let gamma = if cfg.ablation.no_mcl { 0.0 } else { cfg.gamma };

    for (batch_idx, batch) in triples.chunks(cfg.batch_size).enumerate() {
        let mut tape = Tape::new();
        let mut mode = ForwardMode::Train(step_rng(cfg, epoch, batch_idx as u64));
        let pass = forward(&mut tape, state, graph, cfg, &mut mode)?;
        let dense_params: Vec<Var> = state
            .names
            .iter()
            .filter(|n| *n != "id_embeddings")
            .map(|n| pass.param_vars[n])
            .collect();
        let id_var = pass.param_vars["id_embeddings"];
        let bpr = bpr_loss(
            &mut tape,
            pass.e_star,
            id_var,
            graph.user_count,
            batch,
            cfg.lambda1,
            &dense_params,
            cfg.bpr_sum_scores,
        )?;
        let total = joint_loss(
            &mut tape,
            bpr,
            (pass.hcl_user, pass.hcl_item),
            (pass.mcl_user, pass.mcl_item),
            cfg.lambda2,
            gamma,
        )?;
        let total_value = tape.value(total).get(0, 0);
        if !total_value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {total_value} at epoch {epoch} batch {batch_idx}"
            )));
        }
        totals.bpr += tape.value(bpr).get(0, 0);
        totals.hcl += [pass.hcl_user, pass.hcl_item]
            .into_iter()
            .flatten()
            .map(|v| tape.value(v).get(0, 0))
            .sum::<f64>();
        totals.mcl += [pass.mcl_user, pass.mcl_item]
            .into_iter()
            .flatten()
            .map(|v| tape.value(v).get(0, 0))
            .sum::<f64>();
        totals.total += total_value;

        let mut grads = tape.backward(total)?;
        let grad_list: Vec<DenseMatrix> = state
            .names
            .iter()
            .map(|n| grads.take(pass.param_vars[n]))
            .collect();
        state.adam.step(&mut state.params, &grad_list)?;
        if !state.all_finite() {
            return Err(Error::Numeric(format!(
                "parameters became non-finite at epoch {epoch} batch {batch_idx}"
            )));
        }
    }
    state.epoch = epoch + 1;
    Ok(totals)
}

/// Train with early stopping on validation Recall@20; restores the best
/// checkpoint (from its 32-bit serialized form, so a saved checkpoint of
/// the returned state evaluates identically).
pub fn fit(
    state: &mut ModelState,
    ds: &InteractionDataset,
    graph: &PreparedGraph,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let val_by_user = ds.val_items_by_user();
    let has_val = val_by_user.iter().any(|v| !v.is_empty());
    if !has_val {
        eprintln!(
            "warning: empty validation split; training for the fixed {}-epoch budget",
            cfg.max_epochs
        );
    }
    let digest = cfg.digest();
    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        val_recall_trace: Vec::new(),
        best_epoch: 0,
        best_val_recall: f64::NEG_INFINITY,
        stop_reason: String::new(),
    };
    let mut best_bytes: Option<Vec<u8>> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs as u64 {
        let losses = train_epoch(state, ds, graph, cfg, epoch)?;
        report.epoch_losses.push(losses);
        if has_val {
            // score from the 32-bit round trip so the recorded value matches
            // what a reloaded checkpoint reproduces
            let bytes = state.to_bytes(&digest, true);
            let (snapshot, _) = ModelState::from_bytes(&bytes)?;
            let e_star = compute_final_embeddings(&snapshot, graph, cfg)?;
            let recall =
                crate::eval::mean_recall_at_n(&e_star, ds, &val_by_user, 20)?;
            report.val_recall_trace.push(recall);
            if recall > report.best_val_recall {
                report.best_val_recall = recall;
                report.best_epoch = epoch as usize;
                best_bytes = Some(bytes);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > cfg.patience {
                    report.stop_reason = format!(
                        "no val R@20 improvement for {} epochs past epoch {}",
                        since_best - 1,
                        report.best_epoch
                    );
                    break;
                }
            }
        }
    }
    if report.stop_reason.is_empty() {
        report.stop_reason = format!("epoch budget {} exhausted", cfg.max_epochs);
    }
    if let Some(bytes) = best_bytes {
        let (best, _) = ModelState::from_bytes(&bytes)?;
        *state = best;
    }
    Ok(report)
}
