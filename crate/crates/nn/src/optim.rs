//! Adam/AdamW with per-parameter moment state, plus learning-rate and
//! exponential-moving-average schedules.
//!
//! Parameters are addressed by name; each name owns its own first and
//! second moment buffers and step counter, so different tensors can be
//! stepped independently.

use crate::tensor::Tensor2;
use crate::Real;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Weight decay folded into the gradient (classic L2 coupling).
    Adam,
    /// Decoupled weight decay applied directly to the parameter.
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub kind: OptimizerKind,
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub weight_decay: Real,
    /// Element-wise bound on gradient magnitude, enforcing a max-norm
    /// constraint before the moment updates.
    pub grad_clip: Option<Real>,
}

impl AdamConfig {
    pub fn adam(lr: Real, weight_decay: Real) -> Self {
        AdamConfig {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            grad_clip: None,
        }
    }

    pub fn adamw(lr: Real, weight_decay: Real) -> Self {
        AdamConfig { kind: OptimizerKind::AdamW, ..AdamConfig::adam(lr, weight_decay) }
    }

    pub fn with_grad_clip(mut self, clip: Real) -> Self {
        self.grad_clip = Some(clip);
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Moments {
    m: Vec<Real>,
    v: Vec<Real>,
    step: u64,
}

/// Optimizer state for a set of named tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    moments: HashMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, moments: HashMap::new() }
    }

    /// One Adam step on a single tensor. The first call for a name
    /// allocates zeroed moments.
    pub fn step(&mut self, name: &str, param: &mut Tensor2, grad: &Tensor2) {
        assert_eq!(param.shape(), grad.shape(), "gradient shape mismatch for {name}");
        let c = self.config;
        let slot = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; param.len()],
            v: vec![0.0; param.len()],
            step: 0,
        });
        assert_eq!(slot.m.len(), param.len(), "parameter {name} changed size");
        slot.step += 1;
        let t = slot.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);

        for i in 0..param.len() {
            let mut g = grad.data[i];
            if let Some(clip) = c.grad_clip {
                g = g.clamp(-clip, clip);
            }
            match c.kind {
                OptimizerKind::Adam => g += c.weight_decay * param.data[i],
                OptimizerKind::AdamW => param.data[i] *= 1.0 - c.lr * c.weight_decay,
            }
            slot.m[i] = c.beta1 * slot.m[i] + (1.0 - c.beta1) * g;
            slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = slot.m[i] / bias1;
            let v_hat = slot.v[i] / bias2;
            param.data[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }

    /// Steps a whole `(name, param)` / `(name, grad)` pairing; the two
    /// listings must share order.
    pub fn step_all(&mut self, params: Vec<(String, &mut Tensor2)>, grads: &[(String, &Tensor2)]) {
        assert_eq!(params.len(), grads.len());
        for ((pname, param), (gname, grad)) in params.into_iter().zip(grads) {
            assert_eq!(&pname, gname, "parameter and gradient listings diverged");
            self.step(&pname, param, grad);
        }
    }

    pub fn tracked_params(&self) -> usize {
        self.moments.len()
    }
}

/// Linear warmup from zero to `base` over `warmup` steps, then a cosine
/// ramp from `base` down to `min_lr` at `total` steps and beyond.
pub fn cosine_lr(step: u64, base: Real, warmup: u64, total: u64, min_lr: Real) -> Real {
    if warmup > 0 && step < warmup {
        return base * (step + 1) as Real / warmup as Real;
    }
    if total <= warmup {
        return min_lr;
    }
    let progress = ((step - warmup) as Real / (total - warmup) as Real).min(1.0);
    min_lr + 0.5 * (base - min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Warmup-style EMA decay that starts small and ramps toward `max_decay`:
/// `min(1 - (1 + step)^(-power), max_decay)`.
pub fn ema_decay(step: u64, power: Real, max_decay: Real) -> Real {
    let d = 1.0 - (1.0 + step as Real).powf(-power);
    d.min(max_decay).max(0.0)
}

/// `shadow = decay * shadow + (1 - decay) * param`, element-wise.
pub fn ema_update(shadow: &mut Tensor2, param: &Tensor2, decay: Real) {
    assert_eq!(shadow.shape(), param.shape());
    for (s, &p) in shadow.data.iter_mut().zip(&param.data) {
        *s = decay * *s + (1.0 - decay) * p;
    }
}
