//! Offline pseudo-labeling.
//!
//! Features of every training sample are extracted with the current encoder,
//! clustered by k-means with labeled samples pinned to their classes, filtered
//! by per-class distance thresholds, and averaged into a prototype bank.
//!
//! Distances are Euclidean. With unit-norm features and unit-norm centroids
//! this orders samples the same way as cosine similarity, which keeps the
//! clustering consistent with the dot-product prototype classifier.

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{self, AugmentConfig};
use crate::data::{dist, sq_dist, FeatureDataset};
use crate::error::{Error, Result};
use crate::nn::EncoderModel;
use crate::rng::Rng;

/// Slack allowed when checking the objective trace for increases.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    /// k-means with labeled anchors.
    SemiSupervised,
    /// Unconstrained Lloyd's, clusters named by labeled majority.
    KMeans,
}

/// Which unlabeled samples feed the prototype means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeMembers {
    /// Only samples that survived threshold filtering.
    Filtered,
    /// Every clustered unlabeled sample.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub method: ClusterMethod,
    pub max_iters: usize,
    pub tol: f64,
    pub aug_copies: usize,
    pub use_labeled_aug: bool,
    pub use_adaptive_threshold: bool,
    pub prototype_members: PrototypeMembers,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            method: ClusterMethod::SemiSupervised,
            max_iters: 100,
            tol: 1e-6,
            aug_copies: 3,
            use_labeled_aug: true,
            use_adaptive_threshold: true,
            prototype_members: PrototypeMembers::Filtered,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("cluster.max_iters must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::Config(format!("cluster.tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }

    /// Number of augmented copies per labeled sample actually used.
    pub fn effective_copies(&self) -> usize {
        if self.use_labeled_aug {
            self.aug_copies
        } else {
            0
        }
    }
}

/// Features of the training set under one encoder snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedFeatures {
    pub labeled_ids: Vec<usize>,
    pub labeled: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub unlabeled_ids: Vec<usize>,
    pub unlabeled: Vec<Vec<f64>>,
    /// Strong-augmented copies of labeled samples, `copies` per sample in
    /// labeled order.
    pub augmented: Vec<Vec<f64>>,
    pub augmented_labels: Vec<usize>,
}

/// Runs the encoder over every training sample. Labeled and unlabeled
/// samples are not augmented; each labeled sample additionally yields
/// `cfg.effective_copies()` strong-augmented copies.
pub fn extract_all_features(
    m: &EncoderModel,
    ds: &FeatureDataset,
    cfg: &ClusterConfig,
    aug: &AugmentConfig,
    rng: &mut Rng,
) -> Result<ExtractedFeatures> {
    let labeled_ids = ds.labeled_indices();
    let unlabeled_ids = ds.unlabeled_indices();
    let labels: Vec<usize> = labeled_ids
        .iter()
        .map(|&i| ds.label(i).expect("labeled index"))
        .collect();

    let rows = |ids: &[usize]| ids.iter().map(|&i| ds.feature(i)).collect::<Vec<_>>();
    let labeled = m.forward_features(&rows(&labeled_ids))?;
    let unlabeled = if unlabeled_ids.is_empty() {
        Vec::new()
    } else {
        m.forward_features(&rows(&unlabeled_ids))?
    };

    let copies = cfg.effective_copies();
    let mut views = Vec::with_capacity(labeled_ids.len() * copies);
    let mut augmented_labels = Vec::with_capacity(labeled_ids.len() * copies);
    for (&i, &y) in labeled_ids.iter().zip(&labels) {
        for _ in 0..copies {
            views.push(augment::strong(ds.feature(i), aug, rng));
            augmented_labels.push(y);
        }
    }
    let augmented = if views.is_empty() {
        Vec::new()
    } else {
        m.forward_features(&views)?
    };

    Ok(ExtractedFeatures {
        labeled_ids,
        labeled,
        labels,
        unlabeled_ids,
        unlabeled,
        augmented,
        augmented_labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Cluster centres. For semi-supervised clustering, index = class.
    pub centroids: Vec<Vec<f64>>,
    /// Class assigned to each unlabeled sample.
    pub assignments: Vec<usize>,
    /// Distance of each unlabeled sample to its assigned centre.
    pub distances: Vec<f64>,
    pub iterations_run: usize,
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
    /// Objective of the final assignment against the final centres.
    pub objective: f64,
    /// Iterations whose objective rose by more than [`MONOTONE_SLACK`].
    pub monotone_violations: usize,
    /// Class of each cluster (identity for semi-supervised clustering).
    pub cluster_classes: Vec<usize>,
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1e-12 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn check_dims(rows: &[Vec<f64>], dim: usize) -> Result<()> {
    for (row, f) in rows.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                row: Some(row),
                expected: dim,
                found: f.len(),
            });
        }
    }
    Ok(())
}

/// Per-class means over `groups` (pairs of features and their labels),
/// each re-normalized to unit length.
fn class_means(
    groups: &[(&[Vec<f64>], &[usize])],
    num_classes: usize,
    dim: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut sums = vec![vec![0.0; dim]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (features, labels) in groups {
        for (f, &y) in features.iter().zip(labels.iter()) {
            counts[y] += 1;
            sums[y].iter_mut().zip(f).for_each(|(s, v)| *s += v);
        }
    }
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return Err(Error::MissingLabeledClass { class });
    }
    Ok(sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| normalize(s.into_iter().map(|v| v / n as f64).collect()))
        .collect())
}

/// Semi-supervised spherical k-means.
///
/// Centroids start at the normalized class means of the labeled and
/// augmented-labeled features. Each iteration assigns every unlabeled
/// feature to its nearest centroid and recomputes every centroid from its
/// labeled anchors plus assigned unlabeled members. Labeled memberships never
/// change. Stops once no centroid moves by `tol` or more, or after
/// `max_iters` iterations.
pub fn ss_kmeans(
    labeled: &[Vec<f64>],
    labels: &[usize],
    unlabeled: &[Vec<f64>],
    augmented: &[Vec<f64>],
    augmented_labels: &[usize],
    num_classes: usize,
    cfg: &ClusterConfig,
) -> Result<ClusterResult> {
    if labeled.is_empty() {
        return Err(Error::MissingLabeledClass { class: 0 });
    }
    let dim = labeled[0].len();
    check_dims(labeled, dim)?;
    check_dims(unlabeled, dim)?;
    check_dims(augmented, dim)?;
    for &y in labels.iter().chain(augmented_labels) {
        if y >= num_classes {
            return Err(Error::InvalidParameter(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
    }

    let mut centroids = class_means(
        &[(labeled, labels), (augmented, augmented_labels)],
        num_classes,
        dim,
    )?;

    let objective = |centroids: &[Vec<f64>], assign: &[usize]| -> f64 {
        let anchored: f64 = labeled
            .iter()
            .zip(labels)
            .chain(augmented.iter().zip(augmented_labels))
            .map(|(f, &y)| sq_dist(f, &centroids[y]))
            .sum();
        let free: f64 = unlabeled
            .iter()
            .zip(assign)
            .map(|(f, &a)| sq_dist(f, &centroids[a]))
            .sum();
        anchored + free
    };

    let mut trace = Vec::new();
    let mut iterations_run = 0;
    for it in 1..=cfg.max_iters {
        let assign: Vec<usize> = unlabeled.iter().map(|f| nearest(f, &centroids).0).collect();
        let updated = class_means(
            &[(labeled, labels), (augmented, augmented_labels), (unlabeled, &assign)],
            num_classes,
            dim,
        )?;
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| dist(a, b))
            .fold(0.0, f64::max);
        centroids = updated;
        iterations_run = it;
        trace.push(objective(&centroids, &assign));
        if shift < cfg.tol {
            break;
        }
    }

    let (assignments, distances): (Vec<usize>, Vec<f64>) = unlabeled
        .iter()
        .map(|f| {
            let (c, d2) = nearest(f, &centroids);
            (c, d2.sqrt())
        })
        .unzip();
    let monotone_violations = count_increases(&trace);
    if monotone_violations > 0 {
        warn!("semi-supervised k-means objective rose in {monotone_violations} iteration(s)");
    }
    Ok(ClusterResult {
        objective: objective(&centroids, &assignments),
        centroids,
        assignments,
        distances,
        iterations_run,
        objective_trace: trace,
        monotone_violations,
        cluster_classes: (0..num_classes).collect(),
    })
}

fn count_increases(trace: &[f64]) -> usize {
    trace
        .windows(2)
        .filter(|w| w[1] > w[0] + MONOTONE_SLACK)
        .count()
}

/// Plain Lloyd's over labeled and unlabeled features together.
///
/// Initialization is farthest-point traversal starting from the first
/// labeled feature. A cluster that loses all members is re-seeded with the
/// point farthest from its own centre. Clusters are then named by the
/// majority label of their labeled members (ties to the lowest class); a
/// cluster without labeled members takes the lowest class not claimed by any
/// other cluster, or class 0 if every class is claimed.
pub fn pure_kmeans(
    labeled: &[Vec<f64>],
    labels: &[usize],
    unlabeled: &[Vec<f64>],
    num_classes: usize,
    cfg: &ClusterConfig,
) -> Result<ClusterResult> {
    let points: Vec<&[f64]> = labeled
        .iter()
        .chain(unlabeled)
        .map(Vec::as_slice)
        .collect();
    if points.len() < num_classes || num_classes == 0 {
        return Err(Error::InvalidParameter(format!(
            "need at least {num_classes} points for k-means, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    check_dims(labeled, dim)?;
    check_dims(unlabeled, dim)?;

    let mut centroids = farthest_point_init(&points, num_classes);
    let mut assign = vec![0usize; points.len()];
    let mut trace = Vec::new();
    let mut iterations_run = 0;
    for it in 1..=cfg.max_iters {
        for (a, p) in assign.iter_mut().zip(&points) {
            *a = nearest(p, &centroids).0;
        }
        reseed_empty(&points, &mut assign, &centroids, num_classes);
        let updated = lloyd_means(&points, &assign, num_classes, dim);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| dist(a, b))
            .fold(0.0, f64::max);
        centroids = updated;
        iterations_run = it;
        trace.push(
            points
                .iter()
                .zip(&assign)
                .map(|(p, &a)| sq_dist(p, &centroids[a]))
                .sum(),
        );
        if shift < cfg.tol {
            break;
        }
    }
    for (a, p) in assign.iter_mut().zip(&points) {
        *a = nearest(p, &centroids).0;
    }
    let objective = points
        .iter()
        .zip(&assign)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();

    let cluster_classes = name_clusters(&assign[..labeled.len()], labels, num_classes);
    let n_l = labeled.len();
    let assignments = assign[n_l..].iter().map(|&k| cluster_classes[k]).collect();
    let distances = assign[n_l..]
        .iter()
        .zip(unlabeled)
        .map(|(&k, f)| dist(f, &centroids[k]))
        .collect();
    let monotone_violations = count_increases(&trace);
    Ok(ClusterResult {
        centroids,
        assignments,
        distances,
        iterations_run,
        objective_trace: trace,
        objective,
        monotone_violations,
        cluster_classes,
    })
}

fn farthest_point_init(points: &[&[f64]], k: usize) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[0].to_vec()];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, points[0])).collect();
    while centroids.len() < k {
        let (idx, _) = min_d
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        let c = points[idx].to_vec();
        for (m, p) in min_d.iter_mut().zip(points) {
            *m = m.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn reseed_empty(points: &[&[f64]], assign: &mut [usize], centroids: &[Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        // Farthest point among clusters that can spare one.
        let victim = (0..points.len())
            .filter(|&i| counts[assign[i]] > 1)
            .fold(None::<(usize, f64)>, |best, i| {
                let d = sq_dist(points[i], &centroids[assign[i]]);
                match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                }
            });
        let Some((i, _)) = victim else { return };
        warn!("k-means cluster {empty} emptied; re-seeded from point {i}");
        assign[i] = empty;
    }
}

fn lloyd_means(points: &[&[f64]], assign: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| s.into_iter().map(|v| v / n.max(1) as f64).collect())
        .collect()
}

fn name_clusters(labeled_assign: &[usize], labels: &[usize], num_classes: usize) -> Vec<usize> {
    let k = num_classes;
    let mut votes = vec![vec![0usize; num_classes]; k];
    for (&a, &y) in labeled_assign.iter().zip(labels) {
        votes[a][y] += 1;
    }
    let mut classes = vec![None; k];
    for (cluster, v) in votes.iter().enumerate() {
        if v.iter().any(|&n| n > 0) {
            let best = v
                .iter()
                .enumerate()
                .fold((0, 0), |b, (c, &n)| if n > b.1 { (c, n) } else { b });
            classes[cluster] = Some(best.0);
        }
    }
    let mut claimed = vec![false; num_classes];
    classes.iter().flatten().for_each(|&c| claimed[c] = true);
    classes
        .into_iter()
        .enumerate()
        .map(|(cluster, c)| {
            c.unwrap_or_else(|| {
                let pick = claimed.iter().position(|&t| !t).unwrap_or(0);
                if pick < num_classes {
                    claimed[pick] = true;
                }
                warn!("k-means cluster {cluster} has no labeled member; named class {pick}");
                pick
            })
        })
        .collect()
}

/// Global, per-class and adapted distance thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub global: f64,
    pub local: Vec<f64>,
    pub adapt: Vec<f64>,
    /// Classes with no assigned unlabeled sample; their local threshold is 0.
    pub empty_classes: Vec<usize>,
}

/// Mean distance overall, mean distance per assigned class, and the
/// per-class threshold `local(c) / max(local) * global`.
pub fn adaptive_thresholds(result: &ClusterResult, num_classes: usize) -> Result<Thresholds> {
    let n = result.distances.len();
    if n == 0 {
        return Err(Error::NoUnlabeled);
    }
    let global = result.distances.iter().sum::<f64>() / n as f64;
    let mut sums = vec![0.0; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (&a, &d) in result.assignments.iter().zip(&result.distances) {
        sums[a] += d;
        counts[a] += 1;
    }
    let mut empty_classes = Vec::new();
    let local: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(c, (&s, &k))| {
            if k == 0 {
                empty_classes.push(c);
                0.0
            } else {
                s / k as f64
            }
        })
        .collect();
    if !empty_classes.is_empty() {
        warn!("no unlabeled samples assigned to classes {empty_classes:?}; local threshold set to 0");
    }
    Ok(Thresholds {
        adapt: adapt_from(&local, global),
        global,
        local,
        empty_classes,
    })
}

/// `local(c) / max(local) * global`; all-zero locals give `global`.
pub fn adapt_from(local: &[f64], global: f64) -> Vec<f64> {
    let max = local.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![global; local.len()];
    }
    local.iter().map(|l| l / max * global).collect()
}

/// Filtered cluster pseudo-labels, frozen until the next offline event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    /// `(sample id, pseudo-label)` sorted by id.
    pub kept: Vec<(usize, usize)>,
    pub thresholds: Thresholds,
    pub num_unlabeled: usize,
}

impl PseudoLabelSet {
    pub fn get(&self, id: usize) -> Option<usize> {
        self.kept
            .binary_search_by_key(&id, |&(i, _)| i)
            .ok()
            .map(|k| self.kept[k].1)
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Kept fraction of the unlabeled set.
    pub fn coverage(&self) -> f64 {
        if self.num_unlabeled == 0 {
            0.0
        } else {
            self.kept.len() as f64 / self.num_unlabeled as f64
        }
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.kept.len() as u64).to_le_bytes());
        for &(i, y) in &self.kept {
            h.update((i as u64).to_le_bytes());
            h.update((y as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Keeps unlabeled sample `k` when its distance is within its class
/// threshold, or every sample when adaptive thresholding is off.
/// `unlabeled_ids[k]` is the dataset index of the `k`-th clustered sample.
pub fn filter_pseudo_labels(
    result: &ClusterResult,
    thresholds: &Thresholds,
    unlabeled_ids: &[usize],
    cfg: &ClusterConfig,
) -> PseudoLabelSet {
    let mut kept: Vec<(usize, usize)> = result
        .assignments
        .iter()
        .zip(&result.distances)
        .zip(unlabeled_ids)
        .filter(|((&a, &d), _)| !cfg.use_adaptive_threshold || d <= thresholds.adapt[a])
        .map(|((&a, _), &id)| (id, a))
        .collect();
    kept.sort_unstable();
    PseudoLabelSet {
        kept,
        thresholds: thresholds.clone(),
        num_unlabeled: result.assignments.len(),
    }
}

/// The memory-based prototype classifier: one unit vector per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub prototypes: Vec<Vec<f64>>,
    /// Members per class before normalization.
    pub counts: Vec<usize>,
    /// Epoch at which the bank was built.
    pub epoch: usize,
}

impl PrototypeBank {
    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.epoch as u64).to_le_bytes());
        for (p, &n) in self.prototypes.iter().zip(&self.counts) {
            h.update((n as u64).to_le_bytes());
            for v in p {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Normalized mean of labeled features of class `c` plus member features
/// pseudo-labeled `c`.
pub fn build_prototypes(
    labeled: &[Vec<f64>],
    labels: &[usize],
    members: &[Vec<f64>],
    member_labels: &[usize],
    num_classes: usize,
    epoch: usize,
) -> Result<PrototypeBank> {
    let dim = labeled.first().map_or(0, Vec::len);
    check_dims(labeled, dim)?;
    check_dims(members, dim)?;
    let mut sums = vec![vec![0.0; dim]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (f, &y) in labeled.iter().zip(labels).chain(members.iter().zip(member_labels)) {
        counts[y] += 1;
        sums[y].iter_mut().zip(f).for_each(|(s, v)| *s += v);
    }
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return Err(Error::MissingLabeledClass { class });
    }
    let prototypes = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| normalize(s.into_iter().map(|v| v / n as f64).collect()))
        .collect();
    Ok(PrototypeBank {
        prototypes,
        counts,
        epoch,
    })
}

/// Everything one offline event produces.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineOutcome {
    pub result: ClusterResult,
    pub pseudo: PseudoLabelSet,
    pub bank: PrototypeBank,
}

/// Clusters the extracted features, filters pseudo-labels and builds the
/// prototype bank according to `cfg`.
pub fn offline_phase(
    feats: &ExtractedFeatures,
    num_classes: usize,
    cfg: &ClusterConfig,
    epoch: usize,
) -> Result<OfflineOutcome> {
    if feats.unlabeled.is_empty() {
        return Err(Error::NoUnlabeled);
    }
    let result = match cfg.method {
        ClusterMethod::SemiSupervised => ss_kmeans(
            &feats.labeled,
            &feats.labels,
            &feats.unlabeled,
            &feats.augmented,
            &feats.augmented_labels,
            num_classes,
            cfg,
        )?,
        ClusterMethod::KMeans => {
            pure_kmeans(&feats.labeled, &feats.labels, &feats.unlabeled, num_classes, cfg)?
        }
    };
    let thresholds = adaptive_thresholds(&result, num_classes)?;
    let pseudo = filter_pseudo_labels(&result, &thresholds, &feats.unlabeled_ids, cfg);

    let (members, member_labels): (Vec<Vec<f64>>, Vec<usize>) = match cfg.prototype_members {
        PrototypeMembers::All => (feats.unlabeled.clone(), result.assignments.clone()),
        PrototypeMembers::Filtered => feats
            .unlabeled_ids
            .iter()
            .zip(&feats.unlabeled)
            .filter_map(|(&id, f)| pseudo.get(id).map(|y| (f.clone(), y)))
            .unzip(),
    };
    let bank = build_prototypes(
        &feats.labeled,
        &feats.labels,
        &members,
        &member_labels,
        num_classes,
        epoch,
    )?;
    Ok(OfflineOutcome {
        result,
        pseudo,
        bank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ClusterConfig {
        ClusterConfig::default()
    }

    fn result_with(assignments: Vec<usize>, distances: Vec<f64>, c: usize) -> ClusterResult {
        ClusterResult {
            centroids: vec![vec![0.0]; c],
            assignments,
            distances,
            iterations_run: 1,
            objective_trace: vec![],
            objective: 0.0,
            monotone_violations: 0,
            cluster_classes: (0..c).collect(),
        }
    }

    #[test]
    fn no_unlabeled_converges_immediately() {
        let l = vec![vec![3.0, 4.0], vec![0.0, -2.0], vec![1.0, 1.0]];
        let r = ss_kmeans(&l, &[0, 1, 0], &[], &[], &[], 2, &cfg()).unwrap();
        assert_eq!(r.iterations_run, 1);
        let m0 = normalize(vec![2.0, 2.5]);
        assert_eq!(r.centroids[0], m0);
        assert_eq!(r.centroids[1], vec![0.0, -1.0]);
    }

    #[test]
    fn unlabeled_point_goes_to_nearest() {
        let l = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let r = ss_kmeans(&l, &[0, 1], &[vec![0.9, 0.0]], &[], &[], 2, &cfg()).unwrap();
        assert_eq!(r.assignments, vec![0]);
        assert!((r.distances[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn missing_labeled_class_is_an_error() {
        let l = vec![vec![1.0, 0.0]];
        assert!(matches!(
            ss_kmeans(&l, &[0], &[vec![0.0, 1.0]], &[], &[], 2, &cfg()),
            Err(Error::MissingLabeledClass { class: 1 })
        ));
    }

    #[test]
    fn eq4_hand_values() {
        let r = result_with(vec![0, 1, 1, 0], vec![1.0, 5.0, 3.0, 3.0], 2);
        let t = adaptive_thresholds(&r, 2).unwrap();
        assert_eq!(t.local, vec![2.0, 4.0]);
        assert_eq!(t.global, 3.0);
        assert_eq!(t.adapt, vec![1.5, 3.0]);
        assert_eq!(adapt_from(&[2.0, 4.0], 3.0), vec![1.5, 3.0]);
    }

    #[test]
    fn single_class_threshold_is_global() {
        let r = result_with(vec![0, 0, 0], vec![0.2, 0.4, 0.9], 1);
        let t = adaptive_thresholds(&r, 1).unwrap();
        assert!((t.adapt[0] - t.global).abs() < 1e-15);
    }

    #[test]
    fn empty_class_gets_zero_local() {
        let r = result_with(vec![0, 0], vec![0.2, 0.4], 3);
        let t = adaptive_thresholds(&r, 3).unwrap();
        assert_eq!(t.empty_classes, vec![1, 2]);
        assert_eq!(t.local[1], 0.0);
        assert_eq!(t.adapt[2], 0.0);
        assert!(matches!(
            adaptive_thresholds(&result_with(vec![], vec![], 2), 2),
            Err(Error::NoUnlabeled)
        ));
    }

    #[test]
    fn filter_cases() {
        let r = result_with(vec![0, 0, 0], vec![1.0, 2.9, 3.1], 1);
        let t = Thresholds {
            global: 3.0,
            local: vec![3.0],
            adapt: vec![3.0],
            empty_classes: vec![],
        };
        let p = filter_pseudo_labels(&r, &t, &[10, 11, 12], &cfg());
        assert_eq!(p.kept, vec![(10, 0), (11, 0)]);
        assert_eq!(p.get(11), Some(0));
        assert_eq!(p.get(12), None);

        let off = ClusterConfig {
            use_adaptive_threshold: false,
            ..cfg()
        };
        assert_eq!(filter_pseudo_labels(&r, &t, &[10, 11, 12], &off).coverage(), 1.0);

        let zero = result_with(vec![0, 1, 0], vec![0.0; 3], 2);
        let t = adaptive_thresholds(&zero, 2).unwrap();
        assert_eq!(filter_pseudo_labels(&zero, &t, &[0, 1, 2], &cfg()).coverage(), 1.0);
    }

    #[test]
    fn prototype_hand_values() {
        let b = build_prototypes(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 0], &[], &[], 1, 0)
            .unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((b.prototypes[0][0] - s).abs() < 1e-15);
        assert!((b.prototypes[0][1] - s).abs() < 1e-15);
        assert_eq!(b.counts, vec![2]);

        let f = normalize(vec![0.3, -0.4]);
        let b = build_prototypes(std::slice::from_ref(&f), &[0], &[], &[], 1, 0).unwrap();
        assert_eq!(b.prototypes[0], f);
        let b2 = build_prototypes(std::slice::from_ref(&f), &[0], std::slice::from_ref(&b.prototypes[0]), &[0], 1, 0)
            .unwrap();
        for (x, y) in b2.prototypes[0].iter().zip(&f) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn kmeans_recovers_distinct_points() {
        let pts = [vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]];
        let labeled = vec![pts[1].clone(), pts[2].clone(), pts[0].clone()];
        let unlabeled = vec![pts[0].clone(), pts[1].clone(), pts[2].clone()];
        let r = pure_kmeans(&labeled, &[1, 2, 0], &unlabeled, 3, &cfg()).unwrap();
        assert_eq!(r.assignments, vec![0, 1, 2]);
        assert!(r.objective.abs() < 1e-15);
    }

    #[test]
    fn unclaimed_cluster_takes_lowest_free_class() {
        // Both labeled samples are class 2 and sit in different clusters.
        assert_eq!(name_clusters(&[0, 2], &[2, 2], 3), vec![2, 0, 2]);
        assert_eq!(name_clusters(&[0, 1], &[1, 1], 3), vec![1, 1, 0]);
        assert_eq!(name_clusters(&[0, 0], &[1, 0], 2), vec![0, 1]);
    }

    #[test]
    fn fingerprints_track_contents() {
        let b = build_prototypes(&[vec![1.0, 0.0]], &[0], &[], &[], 1, 3).unwrap();
        let mut c = b.clone();
        assert_eq!(b.fingerprint(), c.fingerprint());
        c.prototypes[0][1] = 1e-300;
        assert_ne!(b.fingerprint(), c.fingerprint());
    }
}
