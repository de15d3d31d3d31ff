//! Stripped transformer layer: multi-head scaled dot-product attention over
//! user-item collaborative signals and the global/local structural fusion.
//!
//! The residual/FFN sublayers of a standard transformer are deliberately
//! absent; only the attention kernel is kept.

use std::rc::Rc;

use crate::autodiff::{SparseMatrix, Tape, Var};
use crate::error::{Error, Result};

/// One attention head's projection matrices, each d×(d/H).
#[derive(Clone, Copy)]
pub struct HeadParams {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

/// Restrict attention to the interaction pattern instead of the full
/// row×col grid. Rows without any allowed position come out all-zero.
#[derive(Clone)]
pub enum AttentionMode {
    Dense,
    Masked(Rc<SparseMatrix>),
}

pub struct AttentionOutput {
    /// Head-averaged row-stochastic attention weights.
    pub att: Var,
    /// Head-concatenated attended values, rows×d.
    pub res_e: Var,
}

/// Per head: softmax((rows·W_Q)(cols·W_K)ᵀ/√d_h) applied to cols·W_V.
pub fn multi_head_attention(
    tape: &mut Tape,
    rows: Var,
    cols: Var,
    heads: &[HeadParams],
    mode: &AttentionMode,
) -> Result<AttentionOutput> {
    if heads.is_empty() {
        return Err(Error::Contract("attention requires at least one head".into()));
    }
    let d = tape.value(rows).cols;
    let head_dim = tape.value(heads[0].w_q).cols;
    if d % heads.len() != 0 && head_dim * heads.len() != d {
        return Err(Error::Shape(format!(
            "embedding dim {d} not divisible into {} heads",
            heads.len()
        )));
    }
    let mut att_acc: Option<Var> = None;
    let mut res_parts = Vec::with_capacity(heads.len());
    for head in heads {
        let q = tape.matmul(rows, head.w_q)?;
        let k = tape.matmul(cols, head.w_k)?;
        let v = tape.matmul(cols, head.w_v)?;
        let kt = tape.transpose(k);
        let scores_raw = tape.matmul(q, kt)?;
        let dh = tape.value(head.w_q).cols as f64;
        let scores = tape.scale(scores_raw, 1.0 / dh.sqrt());
        let att_h = match mode {
            AttentionMode::Dense => tape.softmax_rows(scores)?,
            AttentionMode::Masked(pattern) => {
                tape.softmax_rows_masked(scores, Rc::clone(pattern))?
            }
        };
        res_parts.push(tape.matmul(att_h, v)?);
        att_acc = Some(match att_acc {
            Some(a) => tape.add(a, att_h)?,
            None => att_h,
        });
    }
    let att = tape.scale(att_acc.unwrap(), 1.0 / heads.len() as f64);
    let res_e = tape.concat_cols(&res_parts)?;
    Ok(AttentionOutput { att, res_e })
}

/// Map attention weights onto the collaborative signals E_c, producing the
/// global embedding for all |U|+|I| rows: user rows attend over the item
/// slice, item rows over the user slice (shared parameters, transposed
/// construction).
pub fn apply_global(
    tape: &mut Tape,
    att_user_over_items: Var,
    att_item_over_users: Var,
    collaborative: Var,
    user_count: usize,
) -> Result<Var> {
    let total = tape.value(collaborative).rows;
    if user_count > total {
        return Err(Error::Shape("apply_global: user_count exceeds rows".into()));
    }
    let item_count = total - user_count;
    let item_slice = tape.slice_rows(collaborative, user_count, item_count)?;
    let user_slice = tape.slice_rows(collaborative, 0, user_count)?;
    let user_block = tape.matmul(att_user_over_items, item_slice)?;
    let item_block = tape.matmul(att_item_over_users, user_slice)?;
    tape.concat_rows(user_block, item_block)
}

/// E_str = α·NORM(E_GT) + β·NORM(E_ghe), NORM being row-l2 normalization.
pub fn fuse_structural(
    tape: &mut Tape,
    global: Var,
    local: Var,
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    let ng = tape.l2_normalize_rows(global);
    let nl = tape.l2_normalize_rows(local);
    let sg = tape.scale(ng, alpha);
    let sl = tape.scale(nl, beta);
    tape.add(sg, sl)
}
