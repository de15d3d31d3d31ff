//! Learnable hyperedge structure per modality: dependency matrices,
//! Gumbel-Softmax relaxation, two-step message passing, cross-modal fusion
//! and the hypergraph contrastive loss.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DenseMatrix, SparseMatrix, Tape, Var};
use crate::error::{Error, Result};
use crate::gcn;

/// Item- and user-to-hyperedge soft assignments for one modality.
pub struct DependencyMatrices {
    pub items: Var,
    pub users: Var,
}

/// H_i^m = E_i^m · V^mᵀ over raw item features, H_u^m = A_u · H_i^m with the
/// normalized user-item block.
pub fn hyperedge_dependencies(
    tape: &mut Tape,
    raw_item_features: Var,
    hyperedges: Var,
    user_block: &Rc<SparseMatrix>,
) -> Result<DependencyMatrices> {
    let vt = tape.transpose(hyperedges);
    let items = tape.matmul(raw_item_features, vt)?;
    let users = tape.spmm(Rc::clone(user_block), items)?;
    Ok(DependencyMatrices { items, users })
}

/// Logistic reparameterization noise, log δ − log(1−δ) with δ ~ Uniform(0,1),
/// resampled per training step. The δ=0.5 reduction gives zeros.
pub fn sample_logistic_noise(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(rows, cols);
    for v in m.values.iter_mut() {
        // open interval keeps both logs finite
        let delta: f64 = loop {
            let d = rng.gen::<f64>();
            if d > 0.0 && d < 1.0 {
                break d;
            }
        };
        *v = delta.ln() - (1.0 - delta).ln();
    }
    m
}

/// Row-wise softmax of (noise + h)/τ_g. Pass `None` for the evaluation-time
/// δ=0.5 reduction (zero noise).
pub fn gumbel_softmax_rows(
    tape: &mut Tape,
    logits: Var,
    tau_g: f64,
    noise: Option<&DenseMatrix>,
) -> Result<Var> {
    if tau_g <= 0.0 {
        return Err(Error::Contract("gumbel temperature must be positive".into()));
    }
    let perturbed = match noise {
        Some(n) => {
            let nv = tape.leaf(n.clone());
            tape.add(logits, nv)?
        }
        None => logits,
    };
    let scaled = tape.scale(perturbed, 1.0 / tau_g);
    tape.softmax_rows(scaled)
}

/// Inverted-dropout mask for a rows×cols matrix; `None` when p = 0 or at eval.
pub fn dropout_mask(
    rows: usize,
    cols: usize,
    p: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Rc<Vec<f64>>> {
    if p <= 0.0 {
        return None;
    }
    let keep_scale = 1.0 / (1.0 - p);
    Some(Rc::new(
        (0..rows * cols)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect(),
    ))
}

fn maybe_drop(tape: &mut Tape, v: Var, mask: Option<&Rc<Vec<f64>>>) -> Result<Var> {
    match mask {
        Some(m) => tape.dropout(v, Rc::clone(m)),
        None => Ok(v),
    }
}

/// E_i^{m,h+1} = DROP(H̃_i) · DROP(H̃_iᵀ) · E_i^{m,h}.
pub fn hypergraph_propagate_items(
    tape: &mut Tape,
    relaxed_items: Var,
    item_embeddings: Var,
    masks: Option<(&Rc<Vec<f64>>, &Rc<Vec<f64>>)>,
) -> Result<Var> {
    let h = maybe_drop(tape, relaxed_items, masks.map(|m| m.0))?;
    let ht_raw = tape.transpose(relaxed_items);
    let ht = maybe_drop(tape, ht_raw, masks.map(|m| m.1))?;
    let inner = tape.matmul(ht, item_embeddings)?;
    tape.matmul(h, inner)
}

/// E_u^{m,h+1} = DROP(H̃_u) · DROP(H̃_iᵀ) · E_i^{m,h}.
pub fn hypergraph_propagate_users(
    tape: &mut Tape,
    relaxed_users: Var,
    relaxed_items: Var,
    item_embeddings: Var,
    masks: Option<(&Rc<Vec<f64>>, &Rc<Vec<f64>>)>,
) -> Result<Var> {
    let hu = maybe_drop(tape, relaxed_users, masks.map(|m| m.0))?;
    let ht_raw = tape.transpose(relaxed_items);
    let ht = maybe_drop(tape, ht_raw, masks.map(|m| m.1))?;
    let inner = tape.matmul(ht, item_embeddings)?;
    tape.matmul(hu, inner)
}

/// E_ghe = Σ_m [E_u^{m,H}; E_i^{m,H}].
pub fn fuse_local(tape: &mut Tape, per_modality: &[(Var, Var)]) -> Result<Var> {
    if per_modality.is_empty() {
        return Err(Error::Contract("fuse_local: no modalities".into()));
    }
    let mut acc: Option<Var> = None;
    for &(users, items) in per_modality {
        let stacked = tape.concat_rows(users, items)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, stacked)?,
            None => stacked,
        });
    }
    Ok(acc.unwrap())
}

/// Hypergraph-layer InfoNCE; same form as the cross-modal loss.
pub fn hcl_loss(tape: &mut Tape, modality_a: Var, modality_b: Var, tau: f64) -> Result<Var> {
    gcn::mcl_loss(tape, modality_a, modality_b, tau, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use rand::SeedableRng;

    fn user_block_from(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> Rc<SparseMatrix> {
        Rc::new(SparseMatrix::from_triplets(rows, cols, entries.to_vec()).unwrap())
    }

    #[test]
    fn dependencies_hand_example() {
        let mut tape = Tape::new();
        let e = tape.leaf(DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let v = tape.leaf(DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let ub = user_block_from(1, 2, &[(0, 0, 1.0), (0, 1, 1.0)]);
        let dep = hyperedge_dependencies(&mut tape, e, v, &ub).unwrap();
        assert_eq!(tape.value(dep.items).values, vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(tape.value(dep.users).values, vec![3.0, 7.0]);
    }

    #[test]
    fn zero_hyperedges_zero_dependencies() {
        let mut tape = Tape::new();
        let e = tape.leaf(DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let v = tape.leaf(DenseMatrix::zeros(3, 2));
        let ub = user_block_from(1, 2, &[(0, 1, 0.5)]);
        let dep = hyperedge_dependencies(&mut tape, e, v, &ub).unwrap();
        assert!(tape.value(dep.items).values.iter().all(|&x| x == 0.0));
        assert!(tape.value(dep.users).values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gumbel_noise_free_reduction_is_plain_softmax() {
        let logits = DenseMatrix::from_rows(&[&[0.3, -1.2, 0.8], &[2.0, 2.0, 2.0]]);
        let mut tape = Tape::new();
        let l = tape.leaf(logits.clone());
        let g = gumbel_softmax_rows(&mut tape, l, 0.2, None).unwrap();
        let oracle = logits.map(|v| v / 0.2).softmax_rows().unwrap();
        for (a, b) in tape.value(g).values.iter().zip(&oracle.values) {
            assert!((a - b).abs() < 1e-12);
        }
        // all-equal row → uniform
        assert!((tape.value(g).get(1, 0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gumbel_rows_sum_to_one_under_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let mut tape = Tape::new();
            let logits = DenseMatrix::from_values(
                2,
                4,
                (0..8).map(|i| ((i * 31 + trial) % 13) as f64 / 3.0 - 2.0).collect(),
            )
            .unwrap();
            let noise = sample_logistic_noise(2, 4, &mut rng);
            let l = tape.leaf(logits);
            let g = gumbel_softmax_rows(&mut tape, l, 0.7, Some(&noise)).unwrap();
            for r in 0..2 {
                let sum: f64 = tape.value(g).row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gumbel_low_temperature_approaches_one_hot() {
        let mut tape = Tape::new();
        let l = tape.leaf(DenseMatrix::from_rows(&[&[3.0, 0.0, -1.0]]));
        let g = gumbel_softmax_rows(&mut tape, l, 0.01, None).unwrap();
        let max = tape
            .value(g)
            .values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(max > 0.99);
    }

    #[test]
    fn propagate_items_identity_dependencies() {
        let mut tape = Tape::new();
        let h = tape.leaf(DenseMatrix::identity(3));
        let e = tape.leaf(DenseMatrix::from_rows(&[&[1.0, 2.0], &[0.5, -1.0], &[3.0, 0.0]]));
        let out = hypergraph_propagate_items(&mut tape, h, e, None).unwrap();
        assert_eq!(tape.value(out).values, tape.value(e).values);
    }

    #[test]
    fn propagate_matches_dense_oracle() {
        let hv = DenseMatrix::from_rows(&[&[0.7, 0.3], &[0.2, 0.8], &[0.5, 0.5]]);
        let huv = DenseMatrix::from_rows(&[&[0.9, 0.1], &[0.4, 0.6]]);
        let ev = DenseMatrix::from_rows(&[&[1.0, -1.0], &[2.0, 0.5], &[0.0, 3.0]]);
        let mut tape = Tape::new();
        let h = tape.leaf(hv.clone());
        let hu = tape.leaf(huv.clone());
        let e = tape.leaf(ev.clone());
        let items = hypergraph_propagate_items(&mut tape, h, e, None).unwrap();
        let users = hypergraph_propagate_users(&mut tape, hu, h, e, None).unwrap();
        let oracle_items = hv.matmul(&hv.transpose().matmul(&ev).unwrap()).unwrap();
        let oracle_users = huv.matmul(&hv.transpose().matmul(&ev).unwrap()).unwrap();
        for (a, b) in tape.value(items).values.iter().zip(&oracle_items.values) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in tape.value(users).values.iter().zip(&oracle_users.values) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn propagate_zero_inputs() {
        let mut tape = Tape::new();
        let h = tape.leaf(DenseMatrix::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]));
        let zero_e = tape.leaf(DenseMatrix::zeros(2, 3));
        let out = hypergraph_propagate_items(&mut tape, h, zero_e, None).unwrap();
        assert!(tape.value(out).values.iter().all(|&v| v == 0.0));
        let zero_hu = tape.leaf(DenseMatrix::zeros(2, 2));
        let e = tape.leaf(DenseMatrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
        let users = hypergraph_propagate_users(&mut tape, zero_hu, h, e, None).unwrap();
        assert!(tape.value(users).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_local_linearity() {
        let mut tape = Tape::new();
        let u = tape.leaf(DenseMatrix::from_rows(&[&[1.0, 2.0]]));
        let i = tape.leaf(DenseMatrix::from_rows(&[&[3.0, 4.0], &[5.0, 6.0]]));
        let single = fuse_local(&mut tape, &[(u, i)]).unwrap();
        assert_eq!(
            tape.value(single).values,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        );
        let double = fuse_local(&mut tape, &[(u, i), (u, i)]).unwrap();
        for (a, b) in tape.value(double).values.iter().zip(&tape.value(single).values.clone()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn hcl_uniform_two_users_closed_form() {
        let mut tape = Tape::new();
        let a = tape.leaf(DenseMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 1.0]]));
        let b = tape.leaf(DenseMatrix::from_rows(&[&[0.5, 0.0], &[0.0, 4.0]]));
        let l = hcl_loss(&mut tape, a, b, 0.2).unwrap();
        assert!((tape.value(l).get(0, 0) - 2.0 * 2.0_f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn hcl_gradient_matches_fd_three_users() {
        let a = DenseMatrix::from_rows(&[&[0.3, 0.6], &[-0.2, 0.9], &[0.5, 0.5]]);
        let b = DenseMatrix::from_rows(&[&[0.8, -0.1], &[0.3, 0.4], &[-0.6, 0.2]]);
        let mut tape = Tape::new();
        let va = tape.leaf(a.clone());
        let vb = tape.leaf(b.clone());
        let l = hcl_loss(&mut tape, va, vb, 0.2).unwrap();
        let grads = tape.backward(l).unwrap();
        let analytic = vec![grads.grad(va), grads.grad(vb)];
        let f = |xs: &[DenseMatrix]| {
            let mut t = Tape::new();
            let x = t.leaf(xs[0].clone());
            let y = t.leaf(xs[1].clone());
            let l = hcl_loss(&mut t, x, y, 0.2).unwrap();
            t.value(l).get(0, 0)
        };
        let err = gradcheck::max_relative_error(&f, &[a, b], &analytic, 1e-5);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn deterministic_under_seed_with_dropout() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut tape = Tape::new();
            let h = tape.leaf(DenseMatrix::from_rows(&[&[0.6, 0.4], &[0.1, 0.9]]));
            let e = tape.leaf(DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
            let m1 = dropout_mask(2, 2, 0.4, &mut rng).unwrap();
            let m2 = dropout_mask(2, 2, 0.4, &mut rng).unwrap();
            let out = hypergraph_propagate_items(&mut tape, h, e, Some((&m1, &m2))).unwrap();
            tape.value(out).values.clone()
        };
        assert_eq!(run(), run());
    }
}
