//! Central finite-difference oracle for verifying tape adjoints.
//!
//! Used by test and acceptance suites only; it exercises the forward pass
//! alone and stays independent of the backward implementation it checks.

use super::dense::DenseMatrix;

/// Central finite-difference gradient of `f` w.r.t. entry `i` of `inputs[which]`.
pub fn central_diff(
    f: &dyn Fn(&[DenseMatrix]) -> f64,
    inputs: &[DenseMatrix],
    which: usize,
    i: usize,
    h: f64,
) -> f64 {
    let mut plus = inputs.to_vec();
    plus[which].values[i] += h;
    let mut minus = inputs.to_vec();
    minus[which].values[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Largest relative error between analytic gradients and central differences
/// across every entry of every input. Denominator floored at 1.0 so that
/// near-zero gradients are compared absolutely.
pub fn max_relative_error(
    f: &dyn Fn(&[DenseMatrix]) -> f64,
    inputs: &[DenseMatrix],
    analytic: &[DenseMatrix],
    h: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for (w, grad) in analytic.iter().enumerate() {
        for i in 0..grad.values.len() {
            let numeric = central_diff(f, inputs, w, i, h);
            let denom = numeric.abs().max(grad.values[i].abs()).max(1.0);
            worst = worst.max((grad.values[i] - numeric).abs() / denom);
        }
    }
    worst
}
