//! First-order optimizers, gradient clipping, and penalty terms.

use crate::error::TrainError;
use ferrograd_core::{GradientStore, Tensor};
use ferrograd_nn::param::ParamSet;

/// Gradient descent with optional momentum:
/// gₜ = −η∇f + λgₜ₋₁, x ← x + gₜ. With λ = 0 this is plain descent.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    buffers: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Sgd {
            lr,
            momentum: 0.0,
            buffers: Vec::new(),
        }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn step(&mut self, ps: &mut ParamSet, grads: &GradientStore) -> Result<(), TrainError> {
        if self.lr <= 0.0 {
            return Err(TrainError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        self.buffers.resize(ps.len(), None);
        for id in 0..ps.len() {
            if !ps.get(id).trainable {
                continue;
            }
            let grad = match grads.get(id) {
                Some(g) => g,
                None => continue,
            };
            let descent = grad.scale(-self.lr);
            let update = if self.momentum == 0.0 {
                descent
            } else {
                let combined = match &self.buffers[id] {
                    Some(prev) => descent.add(&prev.scale(self.momentum))?,
                    None => descent,
                };
                self.buffers[id] = Some(combined.clone());
                combined
            };
            let param = ps.get_mut(id);
            param.value = param.value.add(&update)?;
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments. `decoupled_decay` switches the weight
/// decay from an L2 gradient term (folded into the raw gradient before the
/// moment updates) to the decoupled form applied outside the adaptive
/// rescaling.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decoupled_decay: bool,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
    step_count: usize,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled_decay: false,
            m: Vec::new(),
            v: Vec::new(),
            step_count: 0,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64, decoupled: bool) -> Self {
        self.weight_decay = wd;
        self.decoupled_decay = decoupled;
        self
    }

    pub fn steps_taken(&self) -> usize {
        self.step_count
    }

    pub fn step(&mut self, ps: &mut ParamSet, grads: &GradientStore) -> Result<(), TrainError> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Config(format!(
                "betas must lie in (0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        self.m.resize(ps.len(), None);
        self.v.resize(ps.len(), None);
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in 0..ps.len() {
            if !ps.get(id).trainable {
                continue;
            }
            let raw = match grads.get(id) {
                Some(g) => g.clone(),
                None => continue,
            };
            let grad = if self.weight_decay > 0.0 && !self.decoupled_decay {
                raw.add(&ps.value(id).scale(self.weight_decay))?
            } else {
                raw
            };
            let m_prev = self.m[id].take().unwrap_or_else(|| Tensor::zeros(grad.shape()));
            let v_prev = self.v[id].take().unwrap_or_else(|| Tensor::zeros(grad.shape()));
            let m = m_prev
                .scale(self.beta1)
                .add(&grad.scale(1.0 - self.beta1))?;
            let v = v_prev
                .scale(self.beta2)
                .add(&grad.mul(&grad)?.scale(1.0 - self.beta2))?;
            let m_hat = m.scale(1.0 / bc1);
            let v_hat = v.scale(1.0 / bc2);
            let mut update = m_hat.div(&v_hat.sqrt().add_scalar(self.eps))?;
            if self.weight_decay > 0.0 && self.decoupled_decay {
                update = update.add(&ps.value(id).scale(self.weight_decay))?;
            }
            let param = ps.get_mut(id);
            param.value = param.value.sub(&update.scale(self.lr))?;
            self.m[id] = Some(m);
            self.v[id] = Some(v);
        }
        Ok(())
    }
}

/// Rescales all gradients so the global l2 norm is at most `max_norm`,
/// preserving direction.
pub fn grad_clip(grads: &mut GradientStore, max_norm: f64) -> Result<f64, TrainError> {
    if max_norm <= 0.0 {
        return Err(TrainError::Config(format!(
            "max_norm must be positive, got {max_norm}"
        )));
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale_all(max_norm / norm);
    }
    Ok(norm)
}

/// Penalty value and per-parameter gradient contribution.
pub struct Penalty {
    pub value: f64,
    pub grads: Vec<Tensor>,
}

/// Σ‖w‖² with gradient 2w.
pub fn l2_penalty(params: &[&Tensor]) -> Penalty {
    let value = params
        .iter()
        .map(|w| w.data().iter().map(|x| x * x).sum::<f64>())
        .sum();
    let grads = params.iter().map(|w| w.scale(2.0)).collect();
    Penalty { value, grads }
}

/// Σ‖w‖₁ with the zero subgradient at zero.
pub fn l1_penalty(params: &[&Tensor]) -> Penalty {
    let value = params
        .iter()
        .map(|w| w.data().iter().map(|x| x.abs()).sum::<f64>())
        .sum();
    let grads = params
        .iter()
        .map(|w| {
            w.map(|x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
        })
        .collect();
    Penalty { value, grads }
}

/// The redundant-parameterization l1 surrogate: w = a ⊙ b with the smooth
/// penalty ‖a‖² + ‖b‖² standing in for ‖w‖₁.
#[derive(Debug, Clone)]
pub struct SpredPair {
    pub a: Tensor,
    pub b: Tensor,
}

impl SpredPair {
    pub fn new(a: Tensor, b: Tensor) -> Result<Self, TrainError> {
        if a.shape() != b.shape() {
            return Err(TrainError::Config(
                "spred factors must share a shape".into(),
            ));
        }
        Ok(SpredPair { a, b })
    }

    pub fn effective_weights(&self) -> Tensor {
        self.a.mul(&self.b).expect("same shape")
    }

    pub fn penalty(&self) -> Penalty {
        let value = self
            .a
            .data()
            .iter()
            .chain(self.b.data())
            .map(|x| x * x)
            .sum();
        Penalty {
            value,
            grads: vec![self.a.scale(2.0), self.b.scale(2.0)],
        }
    }
}
