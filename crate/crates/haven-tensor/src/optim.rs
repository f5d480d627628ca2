use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum OptimError {
    /// A gradient went non-finite; the training step must abort.
    #[error("non-finite gradient in parameter {index} ({name})")]
    NonFiniteGradient { index: usize, name: String },
}

/// RMSProp with global-norm gradient clipping.
///
/// The accumulator update is `acc <- alpha * acc + (1 - alpha) * g^2` and the
/// parameter update `p <- p - lr * g / sqrt(acc + eps)`, applied after the
/// joint clip: if the L2 norm over all gradients exceeds `clip_norm`, every
/// gradient is scaled by `clip_norm / norm` first.
pub struct RmsProp {
    lr: f64,
    alpha: f64,
    eps: f64,
    accum: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(lr: f64, alpha: f64, eps: f64, params: &[Tensor]) -> RmsProp {
        RmsProp {
            lr,
            alpha,
            eps,
            accum: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// One update over `params`, which must match the constructor set in
    /// order and shape. Missing gradients are treated as zero.
    pub fn step(&mut self, params: &[Tensor], clip_norm: f64) -> Result<(), OptimError> {
        assert!(clip_norm > 0.0, "clip_norm must be positive");
        assert_eq!(params.len(), self.accum.len(), "parameter set changed size");

        let grads: Vec<Option<Vec<f64>>> = params.iter().map(|p| p.grad()).collect();
        let mut norm_sq = 0.0;
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                for &v in g {
                    if !v.is_finite() {
                        return Err(OptimError::NonFiniteGradient {
                            index: i,
                            name: format!("shape {:?}", params[i].shape()),
                        });
                    }
                    norm_sq += v * v;
                }
            }
        }
        let norm = norm_sq.sqrt();
        let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };

        for ((param, grad), acc) in params.iter().zip(&grads).zip(&mut self.accum) {
            let mut values = param.to_vec();
            match grad {
                Some(g) => {
                    for ((v, a), &gv) in values.iter_mut().zip(acc.iter_mut()).zip(g) {
                        let gc = gv * scale;
                        *a = self.alpha * *a + (1.0 - self.alpha) * gc * gc;
                        *v -= self.lr * gc / (*a + self.eps).sqrt();
                    }
                }
                None => {
                    for a in acc.iter_mut() {
                        *a *= self.alpha;
                    }
                }
            }
            param.set_values(&values);
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn accumulator(&self, i: usize) -> &[f64] {
        &self.accum[i]
    }
}

/// Clears the gradients of every tensor in the set.
pub fn zero_grads(params: &[Tensor]) {
    for p in params {
        p.zero_grad();
    }
}
