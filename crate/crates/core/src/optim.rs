//! Adaptive moment estimation (Adam) over the model's trainable tensors.

use crate::model::{Gradients, ModelParams};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS_HAT: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS_HAT,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update of every tensor in `params` from the matching `grads`.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "tensor count mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            assert_eq!(p.len(), g.len(), "tensor {k} length mismatch");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    /// Applies `grads` to the head and, unless frozen, the embedding table.
    /// The padding row never receives gradient, so it stays zero.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) {
        let embed_grad = if params.embeddings.frozen {
            None
        } else {
            let d = params.dim();
            let mut dense = vec![0.0; params.vocab_size() * d];
            for (&id, row) in &grads.embed_rows {
                let start = id as usize * d;
                for (dst, src) in dense[start..start + d].iter_mut().zip(row) {
                    *dst = *src;
                }
            }
            Some(dense)
        };

        let mut grad_views: Vec<&[f64]> = grads.head.tensors();
        if let Some(e) = &embed_grad {
            grad_views.push(e);
        }
        let frozen = params.embeddings.frozen;
        let ModelParams { embeddings, head } = params;
        let mut param_views = head.tensors_mut();
        if !frozen {
            param_views.push(embeddings.matrix.as_slice_mut().expect("standard layout"));
        }
        self.step_slices(&mut param_views, &grad_views);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_signed_learning_rate() {
        // f(x) = 0.5 * a * x^2, gradient a*x
        let a = [2.0, 0.5, 3.0];
        let mut x = [1.0, -4.0, 0.25];
        let g: Vec<f64> = x.iter().zip(&a).map(|(x, a)| a * x).collect();
        let lr = 1e-3;
        let expected: Vec<f64> = x
            .iter()
            .zip(&g)
            .map(|(x, g)| x - lr * g / (g.abs() + EPS_HAT))
            .collect();
        let mut opt = Adam::new(lr);
        opt.step_slices(&mut [&mut x[..]], &[&g[..]]);
        for (got, want) in x.iter().zip(&expected) {
            assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn two_steps_match_closed_form() {
        let mut x = [1.0];
        let mut opt = Adam::new(0.1);
        let g1 = 2.0;
        opt.step_slices(&mut [&mut x[..]], &[&[g1][..]]);
        let g2 = 2.0 * x[0];
        let before = x[0];
        opt.step_slices(&mut [&mut x[..]], &[&[g2][..]]);
        let m = 0.9 * 0.1 * g1 + 0.1 * g2;
        let v = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let want = before - 0.1 * m_hat / (v_hat.sqrt() + EPS_HAT);
        assert!((x[0] - want).abs() <= 1e-12);
        assert_eq!(opt.steps(), 2);
    }
}
