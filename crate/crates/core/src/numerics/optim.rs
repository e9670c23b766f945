use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::store::ParameterStore;
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
    pub rms_decay: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.05,
            decay_factor: 0.1,
            decay_epochs: vec![5, 18],
            rms_decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Config("decay_factor must lie in (0, 1)".into()));
        }
        if !(self.rms_decay > 0.0 && self.rms_decay < 1.0) {
            return Err(Error::Config("rms_decay must lie in (0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("decay_epochs must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let n = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.learning_rate * num_traits::Float::powi(self.decay_factor, n as i32)
    }
}

/// One RMSProp update with learning rate `lr`; clears gradients afterwards.
pub fn rmsprop_step<T: Scalar>(store: &mut ParameterStore<T>, config: &OptimizerConfig, lr: f64) {
    let rho = T::of(config.rms_decay);
    let one_minus = T::of(1.0 - config.rms_decay);
    let eps = T::of(config.epsilon);
    let lr = T::of(lr);
    for p in store.iter_mut() {
        let value = p.value.data_mut();
        let cache = p.cache.data_mut();
        let grad = p.grad.data_mut();
        for ((w, c), g) in value.iter_mut().zip(cache.iter_mut()).zip(grad.iter_mut()) {
            *c = rho * *c + one_minus * *g * *g;
            *w = *w - lr * *g / (*c + eps).sqrt();
            *g = T::zero();
        }
    }
}
