//! A one-hidden-layer encoder with a linear classifier head, hand-written
//! backpropagation, and SGD with momentum.
//!
//! ```text
//! x --hidden--> relu --embed--> z --(L2 normalize)--> F --head--> logits --softmax--> p
//! ```
//!
//! Matrices are row-major `out x in`. Batches are flattened row-major too.

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Momentum coefficient used by SGD.
pub const MOMENTUM: f64 = 0.9;
/// Coupled L2 weight decay.
pub const WEIGHT_DECAY: f64 = 0.0005;
/// Base learning rate for the cosine schedule.
pub const BASE_LR: f64 = 0.002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn random(in_dim: usize, out_dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, scale).expect("positive scale");
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    /// `y[b] = W x[b] + bias` for a flattened batch.
    fn apply(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut y = vec![0.0; batch * self.out_dim];
        for b in 0..batch {
            let xb = &x[b * self.in_dim..(b + 1) * self.in_dim];
            let yb = &mut y[b * self.out_dim..(b + 1) * self.out_dim];
            for (o, out) in yb.iter_mut().enumerate() {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                *out = self.bias[o] + row.iter().zip(xb).map(|(w, v)| w * v).sum::<f64>();
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input.
    fn backprop(&self, x: &[f64], dy: &[f64], batch: usize, grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; batch * self.in_dim];
        for b in 0..batch {
            let xb = &x[b * self.in_dim..(b + 1) * self.in_dim];
            let dyb = &dy[b * self.out_dim..(b + 1) * self.out_dim];
            let dxb = &mut dx[b * self.in_dim..(b + 1) * self.in_dim];
            for (o, &g) in dyb.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let row = o * self.in_dim..(o + 1) * self.in_dim;
                for ((gw, w), (xi, dxi)) in grad.weight[row.clone()]
                    .iter_mut()
                    .zip(&self.weight[row])
                    .zip(xb.iter().zip(dxb.iter_mut()))
                {
                    *gw += g * xi;
                    *dxi += g * w;
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub input: usize,
    pub hidden: usize,
    pub embed: usize,
    pub classes: usize,
}

/// Embeddings shorter than this are not normalized; their features are the
/// unit diagonal and no gradient flows back through the normalization.
pub const ZERO_NORM: f64 = 1e-12;

/// What the parametric head reads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    /// The encoder output `F` (unit-norm when normalization is on).
    Features,
    /// The embedding before normalization.
    #[default]
    Embedding,
}

/// Feature extractor plus parametric classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub hidden: Linear,
    pub embed: Linear,
    pub head: Linear,
    pub feature_norm: bool,
    #[serde(default)]
    pub head_input: HeadInput,
}

/// Intermediate activations of a forward pass, consumed by
/// [`EncoderModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub batch: usize,
    input: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden_act: Vec<f64>,
    embed_raw: Vec<f64>,
    embed_norm: Vec<f64>,
    /// Encoder output, `batch x embed`, unit rows when normalization is on.
    pub features: Vec<f64>,
    /// Softmax of the head output, `batch x classes`.
    pub probs: Vec<f64>,
}

impl ForwardCache {
    pub fn feature_row(&self, b: usize, embed: usize) -> &[f64] {
        &self.features[b * embed..(b + 1) * embed]
    }

    pub fn prob_row(&self, b: usize, classes: usize) -> &[f64] {
        &self.probs[b * classes..(b + 1) * classes]
    }
}

/// Same layout as the model parameters.
pub type Gradients = Params;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub hidden: Linear,
    pub embed: Linear,
    pub head: Linear,
}

impl Params {
    pub fn zeros_like(m: &EncoderModel) -> Self {
        Self {
            hidden: Linear::zeros(m.hidden.in_dim, m.hidden.out_dim),
            embed: Linear::zeros(m.embed.in_dim, m.embed.out_dim),
            head: Linear::zeros(m.head.in_dim, m.head.out_dim),
        }
    }

    pub fn slices(&self) -> [&[f64]; 6] {
        [
            &self.hidden.weight,
            &self.hidden.bias,
            &self.embed.weight,
            &self.embed.bias,
            &self.head.weight,
            &self.head.bias,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.embed.weight,
            &mut self.embed.bias,
            &mut self.head.weight,
            &mut self.head.bias,
        ]
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

impl EncoderModel {
    /// He-initialized encoder layers and a zero-bias head.
    pub fn new(shape: ModelShape, feature_norm: bool, rng: &mut Rng) -> Result<Self> {
        if shape.input == 0 || shape.hidden == 0 || shape.embed == 0 || shape.classes == 0 {
            return Err(Error::InvalidParameter(format!(
                "all layer sizes must be positive: {shape:?}"
            )));
        }
        let hidden = Linear::random(
            shape.input,
            shape.hidden,
            (2.0 / shape.input as f64).sqrt(),
            rng,
        );
        let embed = Linear::random(
            shape.hidden,
            shape.embed,
            (2.0 / shape.hidden as f64).sqrt(),
            rng,
        );
        let head = Linear::random(
            shape.embed,
            shape.classes,
            (1.0 / shape.embed as f64).sqrt(),
            rng,
        );
        Ok(Self {
            hidden,
            embed,
            head,
            feature_norm,
            head_input: HeadInput::default(),
        })
    }

    /// Identity encoder of width `dim` with a zero head.
    pub fn identity(dim: usize, classes: usize) -> Self {
        let eye = |n: usize| {
            let mut l = Linear::zeros(n, n);
            for i in 0..n {
                l.weight[i * n + i] = 1.0;
            }
            l
        };
        Self {
            hidden: eye(dim),
            embed: eye(dim),
            head: Linear::zeros(dim, classes),
            feature_norm: false,
            head_input: HeadInput::default(),
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            input: self.hidden.in_dim,
            hidden: self.hidden.out_dim,
            embed: self.embed.out_dim,
            classes: self.head.out_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.in_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.out_dim
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_dim
    }

    pub fn params(&self) -> Params {
        Params {
            hidden: self.hidden.clone(),
            embed: self.embed.clone(),
            head: self.head.clone(),
        }
    }

    pub fn param_slices(&self) -> [&[f64]; 6] {
        [
            &self.hidden.weight,
            &self.hidden.bias,
            &self.embed.weight,
            &self.embed.bias,
            &self.head.weight,
            &self.head.bias,
        ]
    }

    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.embed.weight,
            &mut self.embed.bias,
            &mut self.head.weight,
            &mut self.head.bias,
        ]
    }

    pub fn forward<R: AsRef<[f64]>>(&self, x: &[R]) -> Result<ForwardCache> {
        let d = self.input_dim();
        let batch = x.len();
        let mut input = Vec::with_capacity(batch * d);
        for (row, v) in x.iter().enumerate() {
            let v = v.as_ref();
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    row: Some(row),
                    expected: d,
                    found: v.len(),
                });
            }
            input.extend_from_slice(v);
        }

        let hidden_pre = self.hidden.apply(&input, batch);
        let hidden_act: Vec<f64> = hidden_pre.iter().map(|&v| v.max(0.0)).collect();
        let embed_raw = self.embed.apply(&hidden_act, batch);

        let e = self.embed_dim();
        let mut embed_norm = vec![1.0; batch];
        let mut features = embed_raw.clone();
        if self.feature_norm {
            for b in 0..batch {
                let row = &mut features[b * e..(b + 1) * e];
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > ZERO_NORM {
                    embed_norm[b] = n;
                    row.iter_mut().for_each(|v| *v /= n);
                } else {
                    // A vanishing embedding has no direction; use the diagonal.
                    embed_norm[b] = 0.0;
                    row.fill(1.0 / (e as f64).sqrt());
                }
            }
        }

        let c = self.num_classes();
        let mut probs = self.head.apply(self.head_source(&embed_raw, &features), batch);
        for b in 0..batch {
            softmax_in_place(&mut probs[b * c..(b + 1) * c]);
        }

        Ok(ForwardCache {
            batch,
            input,
            hidden_pre,
            hidden_act,
            embed_raw,
            embed_norm,
            features,
            probs,
        })
    }

    fn head_source<'a>(&self, raw: &'a [f64], features: &'a [f64]) -> &'a [f64] {
        match self.head_input {
            HeadInput::Features => features,
            HeadInput::Embedding => raw,
        }
    }

    pub fn forward_features<R: AsRef<[f64]>>(&self, x: &[R]) -> Result<Vec<Vec<f64>>> {
        let cache = self.forward(x)?;
        let e = self.embed_dim();
        Ok(cache.features.chunks(e).map(<[f64]>::to_vec).collect())
    }

    pub fn forward_logits<R: AsRef<[f64]>>(&self, x: &[R]) -> Result<Vec<Vec<f64>>> {
        let cache = self.forward(x)?;
        let c = self.num_classes();
        Ok(cache.probs.chunks(c).map(<[f64]>::to_vec).collect())
    }

    /// Backpropagates upstream gradients through the network.
    ///
    /// `d_logits` is the gradient of the loss with respect to the head output
    /// before softmax (`batch x classes`); `d_features` is a gradient applied
    /// directly to the encoder output (`batch x embed`). Either may be absent;
    /// both are summed at the features when present.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: Option<&[f64]>,
        d_features: Option<&[f64]>,
    ) -> Result<Gradients> {
        let batch = cache.batch;
        let e = self.embed_dim();
        let c = self.num_classes();
        let mut grads = Params::zeros_like(self);

        let mut d_feat = vec![0.0; batch * e];
        let mut d_head = None;
        if let Some(dl) = d_logits {
            if dl.len() != batch * c {
                return Err(Error::DimensionMismatch {
                    row: None,
                    expected: batch * c,
                    found: dl.len(),
                });
            }
            let src = self.head_source(&cache.embed_raw, &cache.features);
            let dh = self.head.backprop(src, dl, batch, &mut grads.head);
            match self.head_input {
                HeadInput::Features => d_feat.iter_mut().zip(dh).for_each(|(a, b)| *a += b),
                HeadInput::Embedding => d_head = Some(dh),
            }
        }
        if let Some(df) = d_features {
            if df.len() != batch * e {
                return Err(Error::DimensionMismatch {
                    row: None,
                    expected: batch * e,
                    found: df.len(),
                });
            }
            d_feat.iter_mut().zip(df).for_each(|(a, b)| *a += b);
        }

        // Through the normalization: dz = (dF - F (F . dF)) / |z|.
        let mut d_raw = if self.feature_norm {
            let mut d_raw = vec![0.0; batch * e];
            for b in 0..batch {
                let f = &cache.features[b * e..(b + 1) * e];
                let g = &d_feat[b * e..(b + 1) * e];
                let dot: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
                let n = cache.embed_norm[b];
                if n == 0.0 {
                    continue;
                }
                for ((out, fi), gi) in d_raw[b * e..(b + 1) * e].iter_mut().zip(f).zip(g) {
                    *out = (gi - fi * dot) / n;
                }
            }
            d_raw
        } else {
            d_feat
        };
        if let Some(dh) = d_head {
            d_raw.iter_mut().zip(dh).for_each(|(a, b)| *a += b);
        }
        debug_assert_eq!(cache.embed_raw.len(), d_raw.len());

        let mut d_act = self
            .embed
            .backprop(&cache.hidden_act, &d_raw, batch, &mut grads.embed);
        for (g, &pre) in d_act.iter_mut().zip(&cache.hidden_pre) {
            if pre <= 0.0 {
                *g = 0.0;
            }
        }
        self.hidden
            .backprop(&cache.input, &d_act, batch, &mut grads.hidden);
        Ok(grads)
    }
}

/// Momentum buffers and counters for SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub velocity: Params,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(model: &EncoderModel) -> Self {
        Self::with(model, MOMENTUM, WEIGHT_DECAY)
    }

    pub fn with(model: &EncoderModel, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: Params::zeros_like(model),
            momentum,
            weight_decay,
            step: 0,
        }
    }
}

/// `v <- momentum * v + g + decay * theta; theta <- theta - lr * v`.
pub fn sgd_step(
    model: &mut EncoderModel,
    state: &mut OptimizerState,
    grads: &Gradients,
    lr: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!(
            "gradient at optimizer step {}",
            state.step
        )));
    }
    let (mu, wd) = (state.momentum, state.weight_decay);
    for ((theta, v), g) in model
        .param_slices_mut()
        .into_iter()
        .zip(state.velocity.slices_mut())
        .zip(grads.slices())
    {
        if theta.len() != g.len() || v.len() != g.len() {
            return Err(Error::DimensionMismatch {
                row: None,
                expected: theta.len(),
                found: g.len(),
            });
        }
        for ((t, v), g) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = mu * *v + g + wd * *t;
            *t -= lr * *v;
        }
    }
    state.step += 1;
    Ok(())
}

/// Cosine decay from `base` at epoch 0 to zero at `total_epochs`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, base: f64) -> f64 {
    if total_epochs == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (PI * epoch as f64 / total_epochs as f64).cos())
}
