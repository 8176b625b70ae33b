use std::collections::HashMap;

use super::params::{ParamGrads, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One plain step `p ← p − lr·(g + wd·p)` on every trainable parameter.
pub fn sgd_step(store: &mut ParamStore, grads: &ParamGrads, lr: Scalar, weight_decay: Scalar) -> Result<()> {
    Sgd::new(lr, 0.0, weight_decay)?.step(store, grads)
}

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: Scalar,
    pub momentum: Scalar,
    pub weight_decay: Scalar,
    velocity: HashMap<String, Tensor>,
}

impl Sgd {
    pub fn new(lr: Scalar, momentum: Scalar, weight_decay: Scalar) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!("weight decay must be non-negative, got {weight_decay}")));
        }
        Ok(Sgd { lr, momentum, weight_decay, velocity: HashMap::new() })
    }

    /// `v ← μ·v + g + wd·p`, `p ← p − lr·v`. With μ = 0 this is [`sgd_step`].
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        for p in store.iter_mut().filter(|p| p.trainable) {
            let Some(g) = grads.get(&p.name) else { continue };
            if g.shape() != p.value.shape() {
                return Err(Error::shape("sgd_step", p.value.shape(), g.shape()));
            }
            let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
            if mu == 0.0 {
                for (w, &gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                    *w -= lr * (gv + wd * *w);
                }
                continue;
            }
            let v = self.velocity.entry(p.name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for ((w, vv), &gv) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = mu * *vv + gv + wd * *w;
                *w -= lr * *vv;
            }
        }
        Ok(())
    }
}
