//! AdamW with decoupled weight decay, and the warmup + cosine schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference batch size for linear learning-rate scaling.
pub const LR_REFERENCE_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub params: AdamWParams,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    /// `sizes[i]` is the element count of the i-th parameter tensor.
    pub fn new(params: AdamWParams, sizes: &[usize]) -> Self {
        Self {
            params,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One update. Nothing is modified if any gradient is non-finite.
    ///
    /// `p ← p − lr·(m̂/(√v̂ + eps) + wd·p)`
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adamw_step",
                format!(
                    "{} params / {} grads for {} tensors",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::shape(
                    "adamw_step",
                    format!("tensor {i}: {} params, {} grads, {} state", p.len(), g.len(), self.m[i].len()),
                ));
            }
        }
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("adamw_step gradient"));
        }

        self.step += 1;
        let AdamWParams { beta1, beta2, eps } = self.params;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * p[j]);
            }
        }
        Ok(())
    }
}

/// Learning rate at `step` of `total_steps`: linear ramp from 0 to `peak`
/// over `warmup_steps`, then a half-cosine that would reach 0 at
/// `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, peak: f64) -> f64 {
    if step < warmup_steps {
        return peak * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps);
    if span == 0 {
        return peak;
    }
    let progress = ((step - warmup_steps) as f64 / span as f64).min(1.0);
    peak * 0.5 * (1.0 + (PI * progress).cos())
}

/// Linear batch-size scaling against a 256-sample reference batch.
pub fn scale_lr(base_lr: f64, batch_size: usize) -> f64 {
    base_lr * batch_size as f64 / LR_REFERENCE_BATCH as f64
}
