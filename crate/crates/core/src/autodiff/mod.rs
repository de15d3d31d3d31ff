//! Dense/sparse linear algebra with reverse-mode differentiation and Adam.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod sparse;
pub mod tape;

pub use adam::AdamState;
pub use dense::DenseMatrix;
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
mod tape_tests {
    use super::*;
    use std::rc::Rc;

    fn grad_of(
        build: impl Fn(&mut Tape, &[Var]) -> Var,
        inputs: &[DenseMatrix],
    ) -> (f64, Vec<DenseMatrix>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let loss = build(&mut tape, &vars);
        let value = tape.value(loss).get(0, 0);
        let grads = tape.backward(loss).unwrap();
        (value, vars.iter().map(|&v| grads.grad(v)).collect())
    }

    fn check(build: impl Fn(&mut Tape, &[Var]) -> Var + Clone, inputs: &[DenseMatrix], tol: f64) {
        let (_, analytic) = grad_of(build.clone(), inputs);
        let f = |xs: &[DenseMatrix]| grad_of(build.clone(), xs).0;
        let err = gradcheck::max_relative_error(&f, inputs, &analytic, 1e-5);
        assert!(err < tol, "finite-difference mismatch: {err}");
    }

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        // Small deterministic LCG; values in (-1, 1).
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            values.push(((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0);
        }
        DenseMatrix::from_values(rows, cols, values).unwrap()
    }

    #[test]
    fn square_at_three() {
        let x = DenseMatrix::from_values(1, 1, vec![3.0]).unwrap();
        let (v, g) = grad_of(
            |t, vs| {
                let sq = t.hadamard(vs[0], vs[0]).unwrap();
                t.sum_all(sq)
            },
            &[x.clone()],
        );
        assert!((v - 9.0).abs() < 1e-12);
        assert!((g[0].get(0, 0) - 6.0).abs() < 1e-9);
        check(
            |t, vs| {
                let sq = t.hadamard(vs[0], vs[0]).unwrap();
                t.sum_all(sq)
            },
            &[x],
            1e-6,
        );
    }

    #[test]
    fn softmax_sum_is_constant() {
        let x = rand_mat(1, 4, 7);
        let (_, g) = grad_of(
            |t, vs| {
                let s = t.softmax_rows(vs[0]).unwrap();
                t.sum_all(s)
            },
            &[x],
        );
        for v in &g[0].values {
            assert!(v.abs() < 1e-12, "softmax sum gradient should vanish");
        }
    }

    #[test]
    fn matmul_sum_gradient() {
        let a = rand_mat(3, 4, 1);
        let b = rand_mat(4, 2, 2);
        check(
            |t, vs| {
                let p = t.matmul(vs[0], vs[1]).unwrap();
                t.sum_all(p)
            },
            &[a, b],
            1e-4,
        );
    }

    #[test]
    fn spmm_gradient_matches_fd() {
        let s = Rc::new(
            SparseMatrix::from_triplets(3, 3, vec![(0, 1, 0.5), (1, 0, 2.0), (2, 2, -1.0)])
                .unwrap(),
        );
        let d = rand_mat(3, 2, 3);
        let s2 = Rc::clone(&s);
        let (_, analytic) = grad_of(
            move |t, vs| {
                let p = t.spmm(Rc::clone(&s2), vs[0]).unwrap();
                let sq = t.hadamard(p, p).unwrap();
                t.sum_all(sq)
            },
            &[d.clone()],
        );
        let f = move |xs: &[DenseMatrix]| {
            let p = s.spmm(&xs[0]).unwrap();
            p.frob_sq()
        };
        let err = gradcheck::max_relative_error(&f, &[d], &analytic, 1e-5);
        assert!(err < 1e-4);
    }

    #[test]
    fn spmm_da_is_one_bt_pattern() {
        // f(A,B) = sum(A·B) → dB = Aᵀ·1 broadcast; verified against fd.
        let a = rand_mat(4, 4, 4);
        let b = rand_mat(4, 4, 5);
        check(
            |t, vs| {
                let p = t.matmul(vs[0], vs[1]).unwrap();
                t.sum_all(p)
            },
            &[a, b],
            1e-4,
        );
    }

    #[test]
    fn primitive_suite_matches_fd() {
        // Composite chain hitting most registered primitives on random 4×4 input.
        let a = rand_mat(4, 4, 11);
        let b = rand_mat(4, 4, 12);
        check(
            |t, vs| {
                let n = t.l2_normalize_rows(vs[0]);
                let s = t.softmax_rows(vs[1]).unwrap();
                let h = t.hadamard(n, s).unwrap();
                let m = t.matmul(h, vs[1]).unwrap();
                let tm = t.transpose(m);
                let sp = t.softplus(tm);
                let rs = t.row_sum(sp);
                t.logsumexp_all(rs)
            },
            &[a, b],
            1e-4,
        );
    }

    #[test]
    fn gather_slice_concat_gradients() {
        let a = rand_mat(4, 3, 21);
        let b = rand_mat(2, 3, 22);
        let idx = Rc::new(vec![0usize, 2, 2, 3]);
        check(
            move |t, vs| {
                let g = t.gather_rows(vs[0], Rc::clone(&idx)).unwrap();
                let s = t.slice_rows(g, 1, 2).unwrap();
                let c = t.concat_rows(s, vs[1]).unwrap();
                let sq = t.hadamard(c, c).unwrap();
                t.sum_all(sq)
            },
            &[a, b],
            1e-4,
        );
    }

    #[test]
    fn masked_softmax_gradient() {
        let mask = Rc::new(
            SparseMatrix::from_triplets(3, 3, vec![(0, 0, 1.0), (0, 2, 1.0), (1, 1, 1.0)])
                .unwrap(),
        );
        let a = rand_mat(3, 3, 31);
        let m2 = Rc::clone(&mask);
        check(
            move |t, vs| {
                let s = t.softmax_rows_masked(vs[0], Rc::clone(&m2)).unwrap();
                let sq = t.hadamard(s, vs[0]).unwrap();
                t.sum_all(sq)
            },
            &[a.clone()],
            1e-4,
        );
        // fully masked row stays zero
        let mut tape = Tape::new();
        let v = tape.leaf(a);
        let s = tape.softmax_rows_masked(v, mask).unwrap();
        assert!(tape.value(s).row(2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dropout_mask_scales_forward_and_backward() {
        let a = rand_mat(2, 2, 41);
        let mask = Rc::new(vec![0.0, 2.0, 2.0, 0.0]);
        let m2 = Rc::clone(&mask);
        check(
            move |t, vs| {
                let d = t.dropout(vs[0], Rc::clone(&m2)).unwrap();
                let sq = t.hadamard(d, d).unwrap();
                t.sum_all(sq)
            },
            &[a],
            1e-4,
        );
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let v = tape.leaf(rand_mat(2, 2, 51));
        assert!(tape.backward(v).is_err());
    }

    #[test]
    fn unreachable_parameter_gets_zero() {
        let mut tape = Tape::new();
        let used = tape.leaf(rand_mat(2, 2, 61));
        let unused = tape.leaf(rand_mat(3, 3, 62));
        let loss = tape.sum_all(used);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.grad(unused).values.iter().all(|&v| v == 0.0));
    }
}
