//! Weak and strong feature-space augmentations.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    pub strong_mask_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            weak_sigma: 0.05,
            strong_sigma: 0.20,
            strong_mask_prob: 0.10,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.weak_sigma.is_finite()
            && self.strong_sigma.is_finite()
            && self.weak_sigma >= 0.0
            && self.strong_sigma >= 0.0
            && self.weak_sigma <= self.strong_sigma
            && (0.0..1.0).contains(&self.strong_mask_prob);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation settings: {self:?}")))
        }
    }

    /// No perturbation at all; convenient for tests.
    pub fn identity() -> Self {
        Self {
            weak_sigma: 0.0,
            strong_sigma: 0.0,
            strong_mask_prob: 0.0,
        }
    }
}

fn add_noise(x: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated nonnegative");
    x.iter().map(|v| v + normal.sample(rng)).collect()
}

/// Additive Gaussian noise with `weak_sigma`.
pub fn weak(x: &[f64], cfg: &AugmentConfig, rng: &mut Rng) -> Vec<f64> {
    add_noise(x, cfg.weak_sigma, rng)
}

/// Additive Gaussian noise with `strong_sigma`, then each coordinate zeroed
/// independently with probability `strong_mask_prob`.
pub fn strong(x: &[f64], cfg: &AugmentConfig, rng: &mut Rng) -> Vec<f64> {
    let mut out = add_noise(x, cfg.strong_sigma, rng);
    // Mask probability 1 is outside the validated range but handled exactly.
    if cfg.strong_mask_prob > 0.0 {
        for v in &mut out {
            if cfg.strong_mask_prob >= 1.0 || rng.random::<f64>() < cfg.strong_mask_prob {
                *v = 0.0;
            }
        }
    }
    out
}
