//! Plain RMSProp (no momentum, not centered) and the per-epoch learning-rate
//! schedule.

use crate::error::{Error, Result};
use crate::params::ParameterStore;

/// Schedule constants for the paraphrase model: the per-epoch decay factor
/// is `exp(ln(0.1) / (a * b))`.
pub const DECAY_A: f64 = 1500.0;
pub const DECAY_B: f64 = 1250.0;

/// `exp(ln(0.1) / (a * b))`: applying it `a * b` times shrinks the rate tenfold.
pub fn decay_factor(a: f64, b: f64) -> f64 {
    (0.1f64.ln() / (a * b)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    /// Squared-gradient decay.
    pub alpha: f64,
    pub epsilon: f64,
    /// Per-epoch multiplier on `learning_rate`.
    pub decay_factor: f64,
}

impl RmsPropConfig {
    /// Paraphrase-model settings: lr 0.0008, alpha 0.99, eps 1e-8.
    pub fn paraphrase_default() -> Self {
        RmsPropConfig {
            learning_rate: 0.0008,
            alpha: 0.99,
            epsilon: 1e-8,
            decay_factor: decay_factor(DECAY_A, DECAY_B),
        }
    }

    /// Sentiment probe settings: lr 0.00009, alpha 0.9, eps 1e-8, no decay.
    pub fn sentiment_default() -> Self {
        RmsPropConfig {
            learning_rate: 0.00009,
            alpha: 0.9,
            epsilon: 1e-8,
            decay_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.alpha > 0.0
            && self.alpha < 1.0
            && self.epsilon > 0.0
            && self.decay_factor > 0.0
            && self.decay_factor <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "rmsprop needs lr > 0, 0 < alpha < 1, eps > 0, 0 < decay <= 1; got {self:?}"
            )))
        }
    }

    /// Frozen-parameter variant used for determinism checks. Bypasses
    /// `validate`, which rejects a zero rate.
    pub fn frozen(mut self) -> Self {
        self.learning_rate = 0.0;
        self
    }
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self::paraphrase_default()
    }
}

/// Multiplies the learning rate by the decay factor.
pub fn epoch_decay(cfg: RmsPropConfig) -> RmsPropConfig {
    RmsPropConfig {
        learning_rate: cfg.learning_rate * cfg.decay_factor,
        ..cfg
    }
}

/// One RMSProp update over every parameter, then zeroes the gradients.
///
/// Gradients are scanned before anything is written, so a non-finite
/// gradient leaves the store untouched.
pub fn rmsprop_step(store: &mut ParameterStore, cfg: &RmsPropConfig) -> Result<()> {
    for id in store.ids() {
        if store.grad(id).data().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {}; step aborted",
                store.name(id)
            )));
        }
    }
    let RmsPropConfig {
        learning_rate: lr,
        alpha,
        epsilon,
        ..
    } = *cfg;
    store.for_each_entry_mut(|name, value, grad, rms| {
        for ((v, g), r) in value.iter_mut().zip(grad.iter_mut()).zip(rms.iter_mut()) {
            *r = alpha * *r + (1.0 - alpha) * *g * *g;
            *v -= lr * *g / (r.sqrt() + epsilon);
            *g = 0.0;
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name} after rmsprop step")));
        }
        Ok(())
    })
}
