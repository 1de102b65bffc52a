//! Adam with decoupled weight decay, and exponential moving averages.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Adam optimizer state. Moment buffers are allocated per parameter name on
/// first use.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Result<Self> {
        Self::with_betas(lr, (0.9, 0.999), 1e-8, weight_decay)
    }

    pub fn with_betas(lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Adam {
            lr,
            betas,
            eps,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        self.step += 1;
        let (b1, b2) = self.betas;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
        let step_size = T::from_f64(self.lr / bc1);
        let bc2_sqrt = T::from_f64(bc2.sqrt());
        let eps = T::from_f64(self.eps);
        let decay = T::from_f64(1.0 - self.lr * self.weight_decay);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.shape() {
                return Err(Error::shape("adam", format!("{name}: grad {:?} vs param {:?}", g.shape(), p.shape())));
            }
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![T::zero(); g.data().len()], vec![T::zero(); g.data().len()]));
            for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1t * *mv + (T::one() - b1t) * gv;
                *vv = b2t * *vv + (T::one() - b2t) * gv * gv;
                *w = *w * decay - step_size * *mv / ((*vv).sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

/// `target <- decay * target + (1 - decay) * online`, element-wise.
pub fn ema_update<T: Real>(target: &mut ParamSet<T>, online: &ParamSet<T>, decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::InvalidArgument(format!("EMA decay {decay} outside [0, 1]")));
    }
    if !target.same_structure(online) {
        return Err(Error::Structure("EMA target and online parameters differ".into()));
    }
    if decay == 1.0 {
        return Ok(());
    }
    let d = T::from_f64(decay);
    let keep = T::one() - d;
    for ((_, t), (_, o)) in target.iter_mut().zip(online.iter()) {
        for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = d * *tv + keep * ov;
        }
    }
    Ok(())
}

/// EMA decay at `step` of `total`: constant, or cosine-annealed from `base`
/// to 1.0.
pub fn ema_decay_at(base: f64, anneal: bool, step: usize, total: usize) -> f64 {
    if !anneal || total == 0 {
        return base;
    }
    let progress = (step as f64 / total as f64).min(1.0);
    1.0 - (1.0 - base) * ((std::f64::consts::PI * progress).cos() + 1.0) / 2.0
}
