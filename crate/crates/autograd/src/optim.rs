//! Adam with a linear-warmup, cosine-decay learning-rate schedule.

use crate::{AutogradError, Result, Tensor};

/// Learning rate `peak * step / warmup` during warmup, then cosine decay to
/// zero at `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub warmup: u64,
    pub total: u64,
}

impl Schedule {
    pub fn lr(&self, step: u64) -> f64 {
        self.peak * self.factor(step)
    }

    /// The schedule shape in `[0, 1]`.
    pub fn factor(&self, step: u64) -> f64 {
        if self.warmup > 0 && step <= self.warmup {
            return step as f64 / self.warmup as f64;
        }
        if step >= self.total || self.total <= self.warmup {
            return 0.0;
        }
        let frac = (step - self.warmup) as f64 / (self.total - self.warmup) as f64;
        0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Bias-corrected Adam with per-parameter step counters, so parameters that
/// start training late see a fresh bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: Vec<u64>,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: vec![0; params.len()],
        }
    }

    pub fn steps(&self, i: usize) -> u64 {
        self.t[i]
    }

    /// One update at rate `lr` for every parameter whose `trainable` flag is
    /// set. Non-finite gradients abort before anything is modified.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        lr: f64,
        trainable: &[bool],
    ) -> Result<()> {
        for (i, g) in grads.iter().enumerate() {
            if trainable[i] && !g.is_finite() {
                return Err(AutogradError::NonFinite(format!("gradient of parameter {i}")));
            }
            if g.shape() != params[i].shape() {
                return Err(AutogradError::Shape {
                    op: "adam",
                    lhs: params[i].shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        for (i, p) in params.iter_mut().enumerate() {
            if !trainable[i] {
                continue;
            }
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((x, &g), (mk, vk)) in p
                .data_mut()
                .iter_mut()
                .zip(grads[i].data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * g;
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * g * g;
                let mh = *mk / c1;
                let vh = *vk / c2;
                *x -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
