//! SGD and Adam parameter updates over trainable tensors.

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state: update rule, learning rate, and (for Adam) per-parameter
/// moment accumulators plus the step counter driving bias correction.
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    clip_norm: Option<f64>,
    slots: Option<Vec<AdamSlot>>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Optimizer {
        Optimizer {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            clip_norm: None,
            slots: None,
        }
    }

    pub fn adam(learning_rate: f64) -> Optimizer {
        Optimizer {
            kind: OptimizerKind::Adam,
            ..Optimizer::sgd(learning_rate)
        }
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Optimizer {
        match kind {
            OptimizerKind::Sgd => Optimizer::sgd(learning_rate),
            OptimizerKind::Adam => Optimizer::adam(learning_rate),
        }
    }

    /// Rescale gradients so their global L2 norm never exceeds `norm`.
    pub fn with_clip_norm(mut self, norm: f64) -> Optimizer {
        self.clip_norm = Some(norm);
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update to every parameter and zero the gradients.
    ///
    /// All parameters must carry a populated gradient, and the parameter
    /// list must stay identical in order and shape across steps.
    pub fn step(&mut self, params: &[Tensor]) -> Result<(), TensorError> {
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            match p.grad() {
                Some(g) => grads.push(g),
                None => {
                    return Err(TensorError::Contract(format!(
                        "optimizer step: parameter {i} (shape {:?}) has no gradient",
                        p.shape()
                    )))
                }
            }
        }

        if let Some(max_norm) = self.clip_norm {
            let norm = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|&g| g * g)
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let scale = max_norm / norm;
                for g in grads.iter_mut() {
                    for gi in g.iter_mut() {
                        *gi *= scale;
                    }
                }
            }
        }

        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter().zip(&grads) {
                    let lr = self.learning_rate;
                    p.update_values(|v| {
                        for (vi, gi) in v.iter_mut().zip(g) {
                            *vi -= lr * gi;
                        }
                    });
                }
            }
            OptimizerKind::Adam => {
                if self.slots.is_none() {
                    self.slots = Some(
                        params
                            .iter()
                            .map(|p| AdamSlot {
                                m: vec![0.0; p.numel()],
                                v: vec![0.0; p.numel()],
                            })
                            .collect(),
                    );
                }
                let slots = self.slots.as_mut().unwrap();
                if slots.len() != params.len() {
                    return Err(TensorError::Contract(format!(
                        "optimizer step: parameter count changed from {} to {}",
                        slots.len(),
                        params.len()
                    )));
                }
                let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
                let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
                for ((p, g), slot) in params.iter().zip(&grads).zip(slots.iter_mut()) {
                    if slot.m.len() != p.numel() {
                        return Err(TensorError::Contract(format!(
                            "optimizer step: parameter shape changed, state has {} elements, parameter has {}",
                            slot.m.len(),
                            p.numel()
                        )));
                    }
                    let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
                    p.update_values(|v| {
                        for i in 0..v.len() {
                            slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g[i];
                            slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g[i] * g[i];
                            let m_hat = slot.m[i] / bc1;
                            let v_hat = slot.v[i] / bc2;
                            v[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                        }
                    });
                }
            }
        }

        for p in params {
            p.zero_grad();
        }
        Ok(())
    }
}
