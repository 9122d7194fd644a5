//! AdamW with a per-step first-moment coefficient so momentum can cycle.

use crate::nn::{Grads, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
struct Slot {
    m: Tensor,
    v: Tensor,
    t: i32,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    slots: Vec<Option<Slot>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, n_params: usize) -> Self {
        AdamW {
            config,
            slots: vec![None; n_params],
        }
    }

    /// One update. `group_lrs[g]` is the rate for layer group `g`; groups
    /// with `frozen[g]` and non-trainable buffers are left untouched.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &Grads,
        group_lrs: &[f64],
        beta1: f64,
        frozen: &[bool],
    ) {
        let cfg = self.config;
        let ids: Vec<_> = params
            .iter()
            .map(|(id, p)| (id, p.group, p.trainable))
            .collect();
        for (id, group, trainable) in ids {
            if !trainable || frozen.get(group).copied().unwrap_or(false) {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let lr = group_lrs[group];
            let w = params.value_mut(id);
            let slot = self.slots[id.0].get_or_insert_with(|| Slot {
                m: Tensor::zeros(w.rows(), w.cols()),
                v: Tensor::zeros(w.rows(), w.cols()),
                t: 0,
            });
            slot.t += 1;
            let bc1 = 1.0 - beta1.powi(slot.t);
            let bc2 = 1.0 - cfg.beta2.powi(slot.t);
            let decay = 1.0 - lr * cfg.weight_decay;
            let (m, v) = (slot.m.data_mut(), slot.v.data_mut());
            for (((wi, gi), mi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.eps);
                *wi = *wi * decay - lr * update;
            }
        }
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
