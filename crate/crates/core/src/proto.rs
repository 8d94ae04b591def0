//! Online use of the frozen prototype bank: nearest-prototype predictions
//! and the softmax margin losses over feature/prototype dot products.
//!
//! Margin gradients are taken with respect to features only. The bank has no
//! gradient slot and is replaced wholesale at offline events.

use serde::{Deserialize, Serialize};

pub use crate::cluster::PrototypeBank;
use crate::cluster::PseudoLabelSet;
use crate::error::{Error, Result};
use crate::fixmatch::BatchLoss;
use crate::nn::{softmax_in_place, EncoderModel};

/// Which augmented view feeds the margin losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginView {
    Weak,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarginConfig {
    /// Divides every dot product. 1.0 gives the unscaled form.
    pub temperature: f64,
    pub lambda: f64,
    pub view: MarginView,
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            lambda: 1.0,
            view: MarginView::Strong,
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "margin.temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "margin.lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Value and feature-gradient of a margin loss over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLoss {
    pub value: f64,
    pub pass_count: usize,
    pub batch_size: usize,
    /// `batch x embed`, row-major.
    pub d_features: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(bank: &PrototypeBank, f: &[f64], row: usize) -> Result<()> {
    if f.len() != bank.dim() {
        return Err(Error::DimensionMismatch {
            row: Some(row),
            expected: bank.dim(),
            found: f.len(),
        });
    }
    Ok(())
}

/// Index of the prototype with the largest dot product; ties go to the
/// lowest class.
pub fn predict_one(bank: &PrototypeBank, f: &[f64]) -> Result<usize> {
    check_dim(bank, f, 0)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (c, rho) in bank.prototypes.iter().enumerate() {
        let s = dot(f, rho);
        if s > best.1 {
            best = (c, s);
        }
    }
    Ok(best.0)
}

pub fn predict<R: AsRef<[f64]>>(bank: &PrototypeBank, features: &[R]) -> Result<Vec<usize>> {
    features
        .iter()
        .enumerate()
        .map(|(row, f)| {
            check_dim(bank, f.as_ref(), row)?;
            predict_one(bank, f.as_ref())
        })
        .collect()
}

/// `-(1/B) sum_i log softmax(F_i . rho / T)[target_i]`, skipping samples
/// without a target (they still count in `B`).
pub fn margin_loss<R: AsRef<[f64]>>(
    bank: &PrototypeBank,
    features: &[R],
    targets: &[Option<usize>],
    cfg: &MarginConfig,
) -> Result<FeatureLoss> {
    if features.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            row: None,
            expected: features.len(),
            found: targets.len(),
        });
    }
    let b = features.len();
    let e = bank.dim();
    let c = bank.num_classes();
    let t = cfg.temperature;
    let mut value = 0.0;
    let mut pass_count = 0;
    let mut d_features = vec![0.0; b * e];
    let mut probs = vec![0.0; c];
    for (i, (f, target)) in features.iter().zip(targets).enumerate() {
        let f = f.as_ref();
        check_dim(bank, f, i)?;
        let Some(y) = *target else { continue };
        if y >= c {
            return Err(Error::UnknownClass {
                row: i,
                class: y,
                num_classes: c,
            });
        }
        pass_count += 1;
        for (p, rho) in probs.iter_mut().zip(&bank.prototypes) {
            *p = dot(f, rho) / t;
        }
        softmax_in_place(&mut probs);
        value -= probs[y].max(f64::MIN_POSITIVE).ln();
        let grad = &mut d_features[i * e..(i + 1) * e];
        for (k, rho) in bank.prototypes.iter().enumerate() {
            let w = (probs[k] - f64::from(u8::from(k == y))) / (t * b as f64);
            grad.iter_mut().zip(rho).for_each(|(g, r)| *g += w * r);
        }
    }
    Ok(FeatureLoss {
        value: value / b as f64,
        pass_count,
        batch_size: b,
        d_features,
    })
}

/// Margin loss on labeled features with ground-truth targets.
pub fn margin_loss_labeled<R: AsRef<[f64]>>(
    bank: &PrototypeBank,
    features: &[R],
    labels: &[usize],
    cfg: &MarginConfig,
) -> Result<FeatureLoss> {
    let targets: Vec<Option<usize>> = labels.iter().copied().map(Some).collect();
    margin_loss(bank, features, &targets, cfg)
}

/// Margin loss on unlabeled features; `ids` are dataset indices looked up in
/// the pseudo-label set. Samples without a kept pseudo-label contribute
/// nothing. An empty batch has zero loss.
pub fn margin_loss_unlabeled<R: AsRef<[f64]>>(
    bank: &PrototypeBank,
    features: &[R],
    ids: &[usize],
    pseudo: &PseudoLabelSet,
    cfg: &MarginConfig,
) -> Result<FeatureLoss> {
    if features.is_empty() {
        return Ok(FeatureLoss {
            value: 0.0,
            pass_count: 0,
            batch_size: 0,
            d_features: Vec::new(),
        });
    }
    let targets: Vec<Option<usize>> = ids.iter().map(|&id| pseudo.get(id)).collect();
    margin_loss(bank, features, &targets, cfg)
}

/// Forward `views`, apply the margin loss at the features, and backpropagate
/// into the encoder.
pub fn margin_batch_loss<R: AsRef<[f64]>>(
    m: &EncoderModel,
    bank: &PrototypeBank,
    views: &[R],
    targets: &[Option<usize>],
    cfg: &MarginConfig,
) -> Result<BatchLoss> {
    if views.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let cache = m.forward(views)?;
    let e = m.embed_dim();
    let feats: Vec<&[f64]> = (0..cache.batch).map(|b| cache.feature_row(b, e)).collect();
    let fl = margin_loss(bank, &feats, targets, cfg)?;
    let grads = if fl.pass_count == 0 {
        crate::nn::Params::zeros_like(m)
    } else {
        m.backward(&cache, None, Some(&fl.d_features))?
    };
    Ok(BatchLoss {
        value: fl.value,
        pass_count: fl.pass_count,
        batch_size: fl.batch_size,
        grads,
    })
}

/// Labeled plus unlabeled margin loss.
pub fn total_margin(sup: BatchLoss, unsup: &BatchLoss) -> BatchLoss {
    sup.plus(unsup)
}
