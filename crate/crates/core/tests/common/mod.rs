//! Independent straight-line re-implementations used as test oracles.
//!
//! Nothing here calls into the library's numerical code; only plain data
//! (weights, features, labels) crosses the boundary.

#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use aplt::cluster::PrototypeBank;
use aplt::nn::{EncoderModel, HeadInput, Linear};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, written out so the oracle does not share sampling code.
    let u1: f64 = r.random::<f64>().max(1e-300);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| gauss(r)).collect()).collect()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1e-12 {
        v.iter().map(|x| x / n).collect()
    } else {
        vec![1.0 / (v.len() as f64).sqrt(); v.len()]
    }
}

/// Embedding norm before normalization.
pub fn embedding_norm(m: &EncoderModel, x: &[f64]) -> f64 {
    let h: Vec<f64> = affine(&m.hidden, x).into_iter().map(|v| v.max(0.0)).collect();
    affine(&m.embed, &h).iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn sqd(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn affine(l: &Linear, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(l.out_dim);
    for o in 0..l.out_dim {
        let mut s = l.bias[o];
        for i in 0..l.in_dim {
            s += l.weight[o * l.in_dim + i] * x[i];
        }
        out.push(s);
    }
    out
}

/// `(features F, head logits)` for one input.
pub fn forward_one(m: &EncoderModel, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h: Vec<f64> = affine(&m.hidden, x).into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect();
    let z = affine(&m.embed, &h);
    let f = if m.feature_norm { unit(&z) } else { z.clone() };
    let logits = match m.head_input {
        HeadInput::Features => affine(&m.head, &f),
        HeadInput::Embedding => affine(&m.head, &z),
    };
    (f, logits)
}

/// `-log softmax(scores)[y]`, computed with a max shift.
pub fn ce(scores: &[f64], y: usize) -> f64 {
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = scores.iter().map(|s| (s - mx).exp()).sum::<f64>().ln() + mx;
    lse - scores[y]
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let t: f64 = e.iter().sum();
    e.into_iter().map(|v| v / t).collect()
}

fn margin_term(m: &EncoderModel, bank: &PrototypeBank, x: &[f64], y: usize, temp: f64) -> f64 {
    let (f, _) = forward_one(m, x);
    let scores: Vec<f64> = bank
        .prototypes
        .iter()
        .map(|p| p.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() / temp)
        .collect();
    ce(&scores, y)
}

/// Everything the combined objective depends on besides the parameters.
/// Pseudo-labels and masks are inputs: they are held fixed when
/// differentiating, exactly as the training step treats them.
pub struct Objective<'a> {
    pub weak_l: &'a [Vec<f64>],
    pub labels: &'a [usize],
    pub strong_u: &'a [Vec<f64>],
    pub fixmatch_targets: &'a [Option<usize>],
    pub bank: &'a PrototypeBank,
    pub margin_l: &'a [Vec<f64>],
    pub margin_u: &'a [Vec<f64>],
    pub proto_targets_u: &'a [Option<usize>],
    pub temperature: f64,
    pub lambda: f64,
}

impl Objective<'_> {
    /// `L_logits + lambda * L_margin`.
    pub fn value(&self, m: &EncoderModel) -> f64 {
        let bl = self.weak_l.len() as f64;
        let bu = self.strong_u.len() as f64;
        let mut sup = 0.0;
        for (x, &y) in self.weak_l.iter().zip(self.labels) {
            sup += ce(&forward_one(m, x).1, y);
        }
        let mut unsup = 0.0;
        for (x, t) in self.strong_u.iter().zip(self.fixmatch_targets) {
            if let Some(y) = *t {
                unsup += ce(&forward_one(m, x).1, y);
            }
        }
        let mut msup = 0.0;
        for (x, &y) in self.margin_l.iter().zip(self.labels) {
            msup += margin_term(m, self.bank, x, y, self.temperature);
        }
        let mut munsup = 0.0;
        for (x, t) in self.margin_u.iter().zip(self.proto_targets_u) {
            if let Some(y) = *t {
                munsup += margin_term(m, self.bank, x, y, self.temperature);
            }
        }
        sup / bl + unsup / bu + self.lambda * (msup / bl + munsup / bu)
    }
}

/// Central finite difference of `f` with respect to every parameter, in the
/// order of `EncoderModel::param_slices`.
pub fn numeric_gradient(m: &EncoderModel, h: f64, f: impl Fn(&EncoderModel) -> f64) -> Vec<Vec<f64>> {
    let mut probe = m.clone();
    let sizes: Vec<usize> = m.param_slices().iter().map(|s| s.len()).collect();
    let mut out = Vec::new();
    for (k, &n) in sizes.iter().enumerate() {
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let orig = probe.param_slices()[k][i];
            probe.param_slices_mut()[k][i] = orig + h;
            let up = f(&probe);
            probe.param_slices_mut()[k][i] = orig - h;
            let down = f(&probe);
            probe.param_slices_mut()[k][i] = orig;
            g.push((up - down) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Result of the straight-line semi-supervised Lloyd iteration.
pub struct LloydOut {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

/// Anchored spherical Lloyd: labeled and augmented points stay in their
/// class; unlabeled points move to the nearest centre (lowest index on
/// ties); centres are unit-normalized means.
pub fn anchored_lloyd(
    labeled: &[Vec<f64>],
    labels: &[usize],
    augmented: &[Vec<f64>],
    aug_labels: &[usize],
    unlabeled: &[Vec<f64>],
    c: usize,
    max_iters: usize,
    tol: f64,
) -> LloydOut {
    let d = labeled[0].len();
    let mean_of = |assign_u: Option<&[usize]>| -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for class in 0..c {
            let mut s = vec![0.0; d];
            let mut n = 0usize;
            for (x, &y) in labeled.iter().zip(labels) {
                if y == class {
                    for j in 0..d {
                        s[j] += x[j];
                    }
                    n += 1;
                }
            }
            for (x, &y) in augmented.iter().zip(aug_labels) {
                if y == class {
                    for j in 0..d {
                        s[j] += x[j];
                    }
                    n += 1;
                }
            }
            if let Some(a) = assign_u {
                for (x, &y) in unlabeled.iter().zip(a) {
                    if y == class {
                        for j in 0..d {
                            s[j] += x[j];
                        }
                        n += 1;
                    }
                }
            }
            let mean: Vec<f64> = s.iter().map(|v| v / n as f64).collect();
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            out.push(if norm > 1e-12 { mean.iter().map(|v| v / norm).collect() } else { mean });
        }
        out
    };
    let nearest = |x: &[f64], cs: &[Vec<f64>]| -> usize {
        let mut best = 0;
        for k in 1..cs.len() {
            if sqd(x, &cs[k]) < sqd(x, &cs[best]) {
                best = k;
            }
        }
        best
    };

    let mut cs = mean_of(None);
    let mut iterations = 0;
    for it in 1..=max_iters {
        let a: Vec<usize> = unlabeled.iter().map(|x| nearest(x, &cs)).collect();
        let next = mean_of(Some(&a));
        let mut shift: f64 = 0.0;
        for k in 0..c {
            shift = shift.max(sqd(&cs[k], &next[k]).sqrt());
        }
        cs = next;
        iterations = it;
        if shift < tol {
            break;
        }
    }
    let assignments: Vec<usize> = unlabeled.iter().map(|x| nearest(x, &cs)).collect();
    let mut objective = 0.0;
    for (x, &y) in labeled.iter().zip(labels) {
        objective += sqd(x, &cs[y]);
    }
    for (x, &y) in augmented.iter().zip(aug_labels) {
        objective += sqd(x, &cs[y]);
    }
    for (x, &y) in unlabeled.iter().zip(&assignments) {
        objective += sqd(x, &cs[y]);
    }
    LloydOut {
        centroids: cs,
        assignments,
        objective,
        iterations,
    }
}

/// Normalized per-class mean of `rows` labeled `labels`, by brute force.
pub fn brute_prototypes(rows: &[(Vec<f64>, usize)], c: usize) -> Vec<Vec<f64>> {
    (0..c)
        .map(|class| {
            let members: Vec<&Vec<f64>> = rows.iter().filter(|(_, y)| *y == class).map(|(x, _)| x).collect();
            let d = members[0].len();
            let mut mean = vec![0.0; d];
            for m in &members {
                for j in 0..d {
                    mean[j] += m[j] / members.len() as f64;
                }
            }
            unit(&mean)
        })
        .collect()
}
