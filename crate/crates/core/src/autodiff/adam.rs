//! Adam with bias correction over a flat list of parameter matrices.

use super::dense::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<DenseMatrix>,
    pub v: Vec<DenseMatrix>,
}

impl AdamState {
    /// Moments start at zero, shaped like the parameters they track.
    pub fn new(params: &[DenseMatrix], lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params
                .iter()
                .map(|p| DenseMatrix::zeros(p.rows, p.cols))
                .collect(),
            v: params
                .iter()
                .map(|p| DenseMatrix::zeros(p.rows, p.cols))
                .collect(),
        }
    }

    /// One bias-corrected update across all parameter groups.
    pub fn step(&mut self, params: &mut [DenseMatrix], grads: &[DenseMatrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam_step: {} params, {} grads, {} moment groups",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if !p.same_shape(g) || !p.same_shape(m) {
                return Err(Error::Shape("adam_step: parameter/gradient shape".into()));
            }
            for i in 0..p.values.len() {
                let gi = g.values[i];
                m.values[i] = self.beta1 * m.values[i] + (1.0 - self.beta1) * gi;
                v.values[i] = self.beta2 * v.values[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m.values[i] / bc1;
                let v_hat = v.values[i] / bc2;
                p.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
