//! Adam optimizer and exponential moving average of parameters.

use crate::error::{RaddError, Result};
use crate::numkernel::tensor::{GradBuf, Tensor};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for one group of tensors.
///
/// Moments are kept in f64; parameter writes round to the f32 store.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    step: u64,
    slots: Vec<MomentSlot>,
}

#[derive(Debug, Clone)]
pub struct MomentSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, shapes: &[(usize, usize)]) -> Self {
        AdamState {
            hyper,
            step: 0,
            slots: shapes
                .iter()
                .map(|&(r, c)| MomentSlot {
                    m: vec![0.0; r * c],
                    v: vec![0.0; r * c],
                })
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn slots(&self) -> &[MomentSlot] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [MomentSlot] {
        &mut self.slots
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Standard bias-corrected Adam update over a fixed-order group of
    /// tensors paired with gradient buffers of matching shape.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&GradBuf]) -> Result<()> {
        if params.len() != self.slots.len() || grads.len() != self.slots.len() {
            return Err(RaddError::DimMismatch(format!(
                "adam group size {} vs state {}",
                params.len(),
                self.slots.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.hyper.beta1.powi(t);
        let bc2 = 1.0 - self.hyper.beta2.powi(t);
        for ((p, g), slot) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            if p.len() != slot.m.len() || g.data().len() != slot.m.len() {
                return Err(RaddError::DimMismatch(format!(
                    "adam slot length {} vs tensor {} / grad {}",
                    slot.m.len(),
                    p.len(),
                    g.data().len()
                )));
            }
            let (m, v) = (&mut slot.m, &mut slot.v);
            let hyper = self.hyper;
            p.update_all(|i, old| {
                let grad = g.data()[i];
                m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * grad;
                v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * grad * grad;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                old - hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps)
            });
        }
        Ok(())
    }
}

/// In-place EMA update: shadow ← decay·shadow + (1−decay)·live, elementwise.
pub fn ema_update(shadow: &mut Tensor, live: &Tensor, decay: f64) -> Result<()> {
    if shadow.shape() != live.shape() {
        return Err(RaddError::DimMismatch(format!(
            "ema shapes {:?} vs {:?}",
            shadow.shape(),
            live.shape()
        )));
    }
    let l = live.data();
    shadow.update_all(|i, old| decay * old + (1.0 - decay) * l[i]);
    Ok(())
}
