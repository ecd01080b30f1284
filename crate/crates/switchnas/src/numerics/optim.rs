//! Adam optimizer.

use crate::error::{NumericsError, Result};
use crate::numerics::tensor::Tensor;

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64) -> OptimizerState {
        OptimizerState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Apply one Adam step to `params` (name, tensor) pairs.
    ///
    /// Parameters with no gradient are left untouched. A NaN gradient aborts
    /// with a diagnostic naming the parameter. Moment buffers are allocated
    /// lazily on the first step and must keep matching shapes afterwards.
    pub fn step(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        assert_eq!(self.first_moment.len(), params.len(), "parameter set changed under the optimizer");
        for (buf, (_, t)) in self.first_moment.iter().zip(params) {
            assert_eq!(buf.len(), t.numel(), "moment buffer shape drifted");
        }
        for (name, t) in params {
            if let Some(g) = t.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NumericsError::NonFinite { context: format!("gradient of {name}") }.into());
                }
            }
        }

        self.step_count += 1;
        let t = self.step_count as f64;
        let corr1 = 1.0 - self.beta1.powf(t);
        let corr2 = 1.0 - self.beta2.powf(t);

        for (i, (_, param)) in params.iter().enumerate() {
            let Some(grad) = param.grad() else { continue };
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let (b1, b2) = (self.beta1, self.beta2);
            let (lr, eps) = (self.learning_rate, self.epsilon);
            param.update_data(|data| {
                for ((p, &g), (mi, vi)) in
                    data.iter_mut().zip(&grad).zip(m.iter_mut().zip(v.iter_mut()))
                {
                    *mi = b1 * *mi + (1.0 - b1) * g;
                    *vi = b2 * *vi + (1.0 - b2) * g * g;
                    let mhat = *mi / corr1;
                    let vhat = *vi / corr2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}

/// Clear gradients of all parameters.
pub fn zero_grads(params: &[(String, Tensor)]) {
    for (_, t) in params {
        t.zero_grad();
    }
}
