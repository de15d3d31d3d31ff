//! Collaborative and modal graph propagation plus the cross-modal
//! contrastive loss.
//!
//! All functions build onto a caller-owned tape so downstream losses stay
//! differentiable end to end.

use std::rc::Rc;

use crate::autodiff::{SparseMatrix, Tape, Var};
use crate::dataio::InteractionDataset;
use crate::error::{Error, Result};

/// One normalized-propagation step: (D^{-1/2} A D^{-1/2}) · E.
pub fn cgprop(tape: &mut Tape, adj: &Rc<SparseMatrix>, embeddings: Var) -> Result<Var> {
    tape.spmm(Rc::clone(adj), embeddings)
}

/// Modal propagation shares the collaborative kernel.
pub fn mgprop(tape: &mut Tape, adj: &Rc<SparseMatrix>, embeddings: Var) -> Result<Var> {
    cgprop(tape, adj, embeddings)
}

/// Elementwise mean over a layer stack E^0..E^S.
pub fn layer_combine(tape: &mut Tape, layers: &[Var]) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::Contract("layer_combine: empty stack".into()));
    }
    let mut acc = layers[0];
    for &l in &layers[1..] {
        acc = tape.add(acc, l)?;
    }
    Ok(tape.scale(acc, 1.0 / layers.len() as f64))
}

/// Project raw modal features into the embedding space: E_i^m · W_m.
pub fn transform_modal(tape: &mut Tape, raw_features: Var, projection: Var) -> Result<Var> {
    tape.matmul(raw_features, projection)
}

/// Averaging matrix that initializes user modal rows from their train
/// neighbors: row u has weight 1/|N_u| on each interacted item, zero rows
/// for users with no neighbors.
pub fn neighbor_mean_matrix(ds: &InteractionDataset) -> Result<Rc<SparseMatrix>> {
    let mut triplets = Vec::new();
    for (u, items) in ds.train_neighbors.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let w = 1.0 / items.len() as f64;
        for &i in items {
            triplets.push((u, i, w));
        }
    }
    Ok(Rc::new(SparseMatrix::from_triplets(
        ds.user_count,
        ds.item_count,
        triplets,
    )?))
}

/// e_u^m = (1/|N_u|) Σ_{i∈N_u} ẽ_i^m over projected item features.
pub fn init_user_modal(
    tape: &mut Tape,
    neighbor_mean: &Rc<SparseMatrix>,
    projected_items: Var,
) -> Result<Var> {
    tape.spmm(Rc::clone(neighbor_mean), projected_items)
}

/// Per-row cosine similarities between two equally shaped matrices as an
/// N×1 column. Zero-norm rows give cosine 0.
fn row_cosines(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let na = tape.l2_normalize_rows(a);
    let nb = tape.l2_normalize_rows(b);
    let prod = tape.hadamard(na, nb)?;
    Ok(tape.row_sum(prod))
}

/// Cross-modal InfoNCE over row-aligned embeddings of two modalities.
///
/// With `in_batch_negatives` off (default), the denominator sums the
/// positive-pair similarities of all rows as printed:
///   L = Σ_u [ logΣ_{u'} exp(s_{u'}/τ) − s_u/τ ].
/// With it on, the denominator uses cross pairs s(a_u, b_{u'}).
pub fn mcl_loss(
    tape: &mut Tape,
    modality_a: Var,
    modality_b: Var,
    tau: f64,
    in_batch_negatives: bool,
) -> Result<Var> {
    if tau <= 0.0 {
        return Err(Error::Contract("mcl_loss: tau must be positive".into()));
    }
    let (ra, ca) = {
        let m = tape.value(modality_a);
        (m.rows, m.cols)
    };
    {
        let m = tape.value(modality_b);
        if m.rows != ra || m.cols != ca {
            return Err(Error::Shape("mcl_loss: shape mismatch".into()));
        }
    }
    if in_batch_negatives {
        let na = tape.l2_normalize_rows(modality_a);
        let nb = tape.l2_normalize_rows(modality_b);
        let nbt = tape.transpose(nb);
        let sims = tape.matmul(na, nbt)?; // N×N cross-pair cosines
        let scaled = tape.scale(sims, 1.0 / tau);
        let lse = tape.row_logsumexp(scaled);
        let lse_sum = tape.sum_all(lse);
        let eye = tape.leaf(crate::autodiff::DenseMatrix::identity(ra));
        let diag = tape.hadamard(scaled, eye)?;
        let pos_sum = tape.sum_all(diag);
        tape.sub(lse_sum, pos_sum)
    } else {
        let cosines = row_cosines(tape, modality_a, modality_b)?;
        let scaled = tape.scale(cosines, 1.0 / tau);
        let lse = tape.logsumexp_all(scaled);
        let total = tape.scale(lse, ra as f64);
        let pos_sum = tape.sum_all(scaled);
        tape.sub(total, pos_sum)
    }
}
