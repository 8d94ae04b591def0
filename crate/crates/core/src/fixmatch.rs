//! Supervised cross-entropy plus confidence-thresholded consistency on
//! unlabeled data, the objective used during warm-up and kept as the
//! parametric-head loss afterwards.

use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig};
use crate::error::{Error, Result};
use crate::nn::{EncoderModel, Gradients, Params};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixMatchConfig {
    pub tau: f64,
    pub batch_size: usize,
}

impl Default for FixMatchConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            batch_size: 64,
        }
    }
}

impl FixMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// A batch-averaged loss and its gradient with respect to every model
/// parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    /// Samples that contributed (passed the threshold, or were kept).
    pub pass_count: usize,
    pub batch_size: usize,
    pub grads: Gradients,
}

impl BatchLoss {
    pub fn zero(model: &EncoderModel, batch_size: usize) -> Self {
        Self {
            value: 0.0,
            pass_count: 0,
            batch_size,
            grads: Params::zeros_like(model),
        }
    }

    /// Sum of two losses; gradients add.
    pub fn plus(mut self, other: &BatchLoss) -> Self {
        self.value += other.value;
        self.pass_count += other.pass_count;
        self.batch_size = self.batch_size.max(other.batch_size);
        self.grads.add_assign(&other.grads);
        self
    }

    /// `self + weight * other`.
    pub fn plus_weighted(mut self, other: &BatchLoss, weight: f64) -> Self {
        self.value += weight * other.value;
        for (a, b) in self.grads.slices_mut().into_iter().zip(other.grads.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += weight * y);
        }
        self
    }
}

/// Outcome of the unlabeled consistency term.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledOutcome {
    pub loss: BatchLoss,
    /// Weak-view argmax for samples whose confidence reached `tau`.
    pub pseudo_labels: Vec<Option<usize>>,
}

/// `(1/B) sum_i H(y_i, p(view_i))` over pre-augmented views.
pub fn supervised_loss_on_views<R: AsRef<[f64]>>(
    m: &EncoderModel,
    views: &[R],
    labels: &[usize],
) -> Result<BatchLoss> {
    if views.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if views.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            row: None,
            expected: views.len(),
            found: labels.len(),
        });
    }
    let b = views.len();
    let c = m.num_classes();
    let cache = m.forward(views)?;
    let mut value = 0.0;
    let mut d_logits = cache.probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::UnknownClass {
                row: i,
                class: y,
                num_classes: c,
            });
        }
        value -= cache.prob_row(i, c)[y].max(f64::MIN_POSITIVE).ln();
        d_logits[i * c + y] -= 1.0;
    }
    d_logits.iter_mut().for_each(|g| *g /= b as f64);
    let grads = m.backward(&cache, Some(&d_logits), None)?;
    Ok(BatchLoss {
        value: value / b as f64,
        pass_count: b,
        batch_size: b,
        grads,
    })
}

/// Confidence-masked consistency: the weak view labels, the strong view
/// learns. Masked samples still count in the `1/B` denominator.
pub fn unlabeled_loss_on_views<R: AsRef<[f64]>, S: AsRef<[f64]>>(
    m: &EncoderModel,
    weak_views: &[R],
    strong_views: &[S],
    tau: f64,
) -> Result<UnlabeledOutcome> {
    if weak_views.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if weak_views.len() != strong_views.len() {
        return Err(Error::DimensionMismatch {
            row: None,
            expected: weak_views.len(),
            found: strong_views.len(),
        });
    }
    let b = weak_views.len();
    let c = m.num_classes();
    let pseudo_labels = pseudo_label_views(m, weak_views, tau)?;

    let passing: Vec<usize> = (0..b).filter(|&i| pseudo_labels[i].is_some()).collect();
    if passing.is_empty() {
        return Ok(UnlabeledOutcome {
            loss: BatchLoss::zero(m, b),
            pseudo_labels,
        });
    }
    let strong_pass: Vec<&[f64]> = passing.iter().map(|&i| strong_views[i].as_ref()).collect();
    let cache = m.forward(&strong_pass)?;
    let mut value = 0.0;
    let mut d_logits = cache.probs.clone();
    for (k, &i) in passing.iter().enumerate() {
        let y = pseudo_labels[i].expect("passing");
        value -= cache.prob_row(k, c)[y].max(f64::MIN_POSITIVE).ln();
        d_logits[k * c + y] -= 1.0;
    }
    d_logits.iter_mut().for_each(|g| *g /= b as f64);
    let grads = m.backward(&cache, Some(&d_logits), None)?;
    Ok(UnlabeledOutcome {
        loss: BatchLoss {
            value: value / b as f64,
            pass_count: passing.len(),
            batch_size: b,
            grads,
        },
        pseudo_labels,
    })
}

/// Argmax of the parametric head where its confidence reaches `tau`.
pub fn pseudo_label_views<R: AsRef<[f64]>>(
    m: &EncoderModel,
    views: &[R],
    tau: f64,
) -> Result<Vec<Option<usize>>> {
    let probs = m.forward_logits(views)?;
    Ok(probs
        .iter()
        .map(|q| {
            let (arg, &max) = q
                .iter()
                .enumerate()
                .fold((0, &q[0]), |best, (j, p)| if *p > *best.1 { (j, p) } else { best });
            (max >= tau).then_some(arg)
        })
        .collect())
}

/// Supervised term with weak augmentation drawn from `rng`.
pub fn supervised_loss<R: AsRef<[f64]>>(
    m: &EncoderModel,
    batch: &[R],
    labels: &[usize],
    aug: &AugmentConfig,
    rng: &mut Rng,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let views: Vec<Vec<f64>> = batch
        .iter()
        .map(|x| augment::weak(x.as_ref(), aug, rng))
        .collect();
    supervised_loss_on_views(m, &views, labels)
}

/// Unlabeled term; weak then strong view per sample, drawn from `rng`.
pub fn unlabeled_loss<R: AsRef<[f64]>>(
    m: &EncoderModel,
    batch: &[R],
    cfg: &FixMatchConfig,
    aug: &AugmentConfig,
    rng: &mut Rng,
) -> Result<UnlabeledOutcome> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (weak, strong): (Vec<_>, Vec<_>) = batch
        .iter()
        .map(|x| {
            let w = augment::weak(x.as_ref(), aug, rng);
            let s = augment::strong(x.as_ref(), aug, rng);
            (w, s)
        })
        .unzip();
    unlabeled_loss_on_views(m, &weak, &strong, cfg.tau)
}

/// Warm-up objective: supervised plus unlabeled term.
pub fn warmup_objective(sup: BatchLoss, unsup: &BatchLoss) -> BatchLoss {
    sup.plus(unsup)
}
