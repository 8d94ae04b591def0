//! The training driver.
//!
//! Epochs `[0, warmup)` optimize the FixMatch objective alone. At the start of
//! epoch `warmup`, and every `offline_every` epochs after it, training pauses
//! for an offline event: features are re-extracted, clustered and filtered,
//! and a fresh pseudo-label set and prototype bank replace the previous ones.
//! Both stay frozen until the next event. Between events each step minimizes
//! `L_logits + lambda * L_margin`. Testing uses the prototype bank.

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment;
use crate::cluster::{self, ClusterMethod, OfflineOutcome, PrototypeBank, PseudoLabelSet};
use crate::config::{Mode, RunConfig};
use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::fixmatch::{self, BatchLoss};
use crate::metrics::{EpochRecord, OfflineRecord, RunMetrics, RunSummary};
use crate::nn::{self, EncoderModel, OptimizerState};
use crate::proto::{self, MarginView};
use crate::rng::{self, Rng, Stream};

/// Model, bank and metrics at the end of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub model: EncoderModel,
    pub bank: Option<PrototypeBank>,
    pub pseudo: Option<PseudoLabelSet>,
}

/// Loss values of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub logits: f64,
    pub margin: f64,
    pub total: f64,
    pub pass_count: usize,
}

/// Top-1 accuracy of the prototype path (if a bank is given) and of the
/// parametric head on `test`.
pub fn evaluate(
    m: &EncoderModel,
    bank: Option<&PrototypeBank>,
    test: &FeatureDataset,
) -> Result<(Option<f64>, f64)> {
    if test.is_empty() {
        return Ok((bank.map(|_| 0.0), 0.0));
    }
    let n = test.len() as f64;
    let cache = m.forward(test.features())?;
    let e = m.embed_dim();
    let c = m.num_classes();
    let param_hits = (0..test.len())
        .filter(|&i| argmax(cache.prob_row(i, c)) == test.eval_label(i))
        .count();
    let proto_acc = match bank {
        Some(bank) => {
            let feats: Vec<&[f64]> = (0..test.len()).map(|i| cache.feature_row(i, e)).collect();
            let pred = proto::predict(bank, &feats)?;
            let hits = pred
                .iter()
                .enumerate()
                .filter(|&(i, &p)| p == test.eval_label(i))
                .count();
            Some(hits as f64 / n)
        }
        None => None,
    };
    Ok((proto_acc, param_hits as f64 / n))
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
}

/// Cycles through a shuffled permutation, reshuffling at each wrap.
struct Cycle {
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(ids: Vec<usize>, rng: &mut Rng) -> Self {
        let mut order = ids;
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, n: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Runs one offline event on the current encoder.
pub fn offline_event(
    model: &EncoderModel,
    train: &FeatureDataset,
    cfg: &RunConfig,
    epoch: usize,
) -> Result<(OfflineOutcome, OfflineRecord)> {
    let mut rng = rng::epoch_stream(cfg.seed, Stream::OfflineAugment, epoch);
    let feats = cluster::extract_all_features(model, train, &cfg.cluster, &cfg.augment, &mut rng)?;
    let outcome = cluster::offline_phase(&feats, train.num_classes(), &cfg.cluster, epoch)?;

    // Scoring against hidden labels; nothing below feeds back into training.
    let kept_hits = outcome
        .pseudo
        .kept
        .iter()
        .filter(|&&(id, y)| train.eval_label(id) == y)
        .count();
    let all_hits = feats
        .unlabeled_ids
        .iter()
        .zip(&outcome.result.assignments)
        .filter(|&(&id, &y)| train.eval_label(id) == y)
        .count();
    let pl_acc = if outcome.pseudo.is_empty() {
        0.0
    } else {
        kept_hits as f64 / outcome.pseudo.len() as f64
    };
    let record = OfflineRecord {
        epoch,
        method: match cfg.cluster.method {
            ClusterMethod::SemiSupervised => "semi_supervised".into(),
            ClusterMethod::KMeans => "k_means".into(),
        },
        iterations_run: outcome.result.iterations_run,
        objective: outcome.result.objective,
        monotone_violations: outcome.result.monotone_violations,
        num_unlabeled: outcome.pseudo.num_unlabeled,
        kept: outcome.pseudo.len(),
        coverage: outcome.pseudo.coverage(),
        tau_global: outcome.pseudo.thresholds.global,
        tau_local: outcome.pseudo.thresholds.local.clone(),
        tau_adapt: outcome.pseudo.thresholds.adapt.clone(),
        empty_classes: outcome.pseudo.thresholds.empty_classes.clone(),
        pseudo_label_accuracy: pl_acc,
        cluster_accuracy: all_hits as f64 / feats.unlabeled_ids.len().max(1) as f64,
        bank_fingerprint: outcome.bank.fingerprint(),
        pseudo_fingerprint: outcome.pseudo.fingerprint(),
    };
    info!(
        "offline event at epoch {epoch}: {} iterations, coverage {:.3}, pseudo-label accuracy {:.3}",
        record.iterations_run, record.coverage, record.pseudo_label_accuracy
    );
    Ok((outcome, record))
}

/// Trains according to `cfg.mode` and returns the final state and metrics.
pub fn run(train: &FeatureDataset, test: &FeatureDataset, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    train.validate_for_training()?;
    if test.dim() != train.dim() && !test.is_empty() {
        return Err(Error::DimensionMismatch {
            row: None,
            expected: train.dim(),
            found: test.dim(),
        });
    }

    let shape = cfg.model_shape(train.dim(), train.num_classes());
    let mut model = EncoderModel::new(
        shape,
        cfg.model.feature_norm,
        &mut rng::stream(cfg.seed, Stream::Init),
    )?;
    model.head_input = cfg.model.head_input;
    let mut opt = OptimizerState::with(&model, cfg.optim.momentum, cfg.optim.weight_decay);

    let schedule = match cfg.mode {
        Mode::Aplt => cfg.schedule,
        Mode::Fixmatch | Mode::Supervised => crate::config::PhaseSchedule {
            offline_enabled: false,
            ..cfg.schedule
        },
    };
    let total_epochs = schedule.total_epochs();
    let labeled_ids = train.labeled_indices();
    let unlabeled_ids = train.unlabeled_indices();
    let batch = cfg.fixmatch.batch_size;

    let mut metrics = RunMetrics::default();
    let mut bank: Option<PrototypeBank> = None;
    let mut pseudo: Option<PseudoLabelSet> = None;
    let mut cluster_acc: Option<f64> = None;

    for epoch in 0..total_epochs {
        if schedule.is_offline_epoch(epoch) {
            let (outcome, record) = offline_event(&model, train, cfg, epoch)?;
            cluster_acc = Some(record.pseudo_label_accuracy);
            metrics.offline.push(record);
            bank = Some(outcome.bank);
            pseudo = Some(outcome.pseudo);
        }

        let lr = nn::cosine_lr(epoch, total_epochs, cfg.optim.lr);
        let mut shuffle_rng = rng::epoch_stream(cfg.seed, Stream::Shuffle, epoch);
        let mut aug_rng = rng::epoch_stream(cfg.seed, Stream::OnlineAugment, epoch);
        let mut margin_rng = rng::epoch_stream(cfg.seed, Stream::MarginAugment, epoch);

        let mut order = unlabeled_ids.clone();
        order.shuffle(&mut shuffle_rng);
        let mut cycle = Cycle::new(labeled_ids.clone(), &mut shuffle_rng);
        let unlabeled_batches: Vec<Vec<usize>> = match schedule.steps_per_epoch {
            None => order.chunks(batch).map(<[usize]>::to_vec).collect(),
            Some(n) => {
                let mut u = Cycle { order, pos: 0 };
                (0..n).map(|_| u.take(batch, &mut shuffle_rng)).collect()
            }
        };

        let (mut sum_logits, mut sum_margin, mut sum_total) = (0.0, 0.0, 0.0);
        let (mut steps, mut passes, mut pass_hits, mut seen) = (0usize, 0usize, 0usize, 0usize);

        for chunk in &unlabeled_batches {
            let lab = cycle.take(batch, &mut shuffle_rng);
            let ctx = StepContext {
                train,
                cfg,
                bank: bank.as_ref(),
                pseudo: pseudo.as_ref(),
            };
            let (grads, losses, pseudo_labels) =
                ctx.step(&model, &lab, chunk, &mut aug_rng, &mut margin_rng)?;
            if !losses.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {epoch}, step {steps}: logits {}, margin {}",
                    losses.logits, losses.margin
                )));
            }
            nn::sgd_step(&mut model, &mut opt, &grads, lr)?;

            sum_logits += losses.logits;
            sum_margin += losses.margin;
            sum_total += losses.total;
            steps += 1;
            passes += losses.pass_count;
            seen += chunk.len();
            pass_hits += chunk
                .iter()
                .zip(&pseudo_labels)
                .filter(|&(&id, y)| *y == Some(train.eval_label(id)))
                .count();
        }

        let (proto_acc, param_acc) = evaluate(&model, bank.as_ref(), test)?;
        let denom = steps.max(1) as f64;
        let record = EpochRecord {
            epoch,
            phase: if epoch < schedule.warmup_epochs { "warmup" } else { "main" }.into(),
            lr,
            steps,
            loss_logits: sum_logits / denom,
            loss_margin: sum_margin / denom,
            loss_total: sum_total / denom,
            pass_count: passes,
            unlabeled_seen: seen,
            fixmatch_pl_accuracy: (passes > 0).then(|| pass_hits as f64 / passes as f64),
            cluster_pl_accuracy: cluster_acc,
            cluster_coverage: pseudo.as_ref().map(PseudoLabelSet::coverage),
            test_proto_acc: proto_acc,
            test_param_acc: param_acc,
            bank_fingerprint: bank.as_ref().map(PrototypeBank::fingerprint),
            pseudo_fingerprint: pseudo.as_ref().map(PseudoLabelSet::fingerprint),
        };
        debug!(
            "epoch {epoch}: lr {lr:.5} loss {:.4} param {:.3} proto {:?}",
            record.loss_total, param_acc, proto_acc
        );
        metrics.epochs.push(record);
    }

    let (proto_acc, param_acc) = evaluate(&model, bank.as_ref(), test)?;
    let last = metrics.epochs.last();
    metrics.summary = Some(RunSummary {
        mode: mode_name(cfg.mode).into(),
        seed: cfg.seed,
        epochs: total_epochs,
        offline_events: metrics.offline.len(),
        final_proto_acc: proto_acc,
        final_param_acc: param_acc,
        final_accuracy: proto_acc.unwrap_or(param_acc),
        final_fixmatch_pl_accuracy: last.and_then(|e| e.fixmatch_pl_accuracy),
        final_cluster_pl_accuracy: metrics.offline.last().map(|o| o.pseudo_label_accuracy),
        final_coverage: metrics.offline.last().map(|o| o.coverage),
    });

    Ok(RunOutput {
        metrics,
        model,
        bank,
        pseudo,
    })
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Aplt => "aplt",
        Mode::Fixmatch => "fixmatch",
        Mode::Supervised => "supervised",
    }
}

/// Read-only state shared by every step of an epoch.
pub struct StepContext<'a> {
    pub train: &'a FeatureDataset,
    pub cfg: &'a RunConfig,
    pub bank: Option<&'a PrototypeBank>,
    pub pseudo: Option<&'a PseudoLabelSet>,
}

impl StepContext<'_> {
    /// Gradients and losses of one step on the given labeled and unlabeled
    /// sample ids. Also returns the thresholded parametric pseudo-labels of
    /// the unlabeled batch.
    pub fn step(
        &self,
        model: &EncoderModel,
        labeled: &[usize],
        unlabeled: &[usize],
        aug_rng: &mut Rng,
        margin_rng: &mut Rng,
    ) -> Result<(nn::Gradients, StepLosses, Vec<Option<usize>>)> {
        let cfg = self.cfg;
        let ds = self.train;
        let labels: Vec<usize> = labeled
            .iter()
            .map(|&i| ds.label(i).ok_or(Error::DegenerateSplit))
            .collect::<Result<_>>()?;

        let weak_l: Vec<Vec<f64>> = labeled
            .iter()
            .map(|&i| augment::weak(ds.feature(i), &cfg.augment, aug_rng))
            .collect();
        let (weak_u, strong_u): (Vec<Vec<f64>>, Vec<Vec<f64>>) = unlabeled
            .iter()
            .map(|&i| {
                let w = augment::weak(ds.feature(i), &cfg.augment, aug_rng);
                let s = augment::strong(ds.feature(i), &cfg.augment, aug_rng);
                (w, s)
            })
            .unzip();

        let sup = fixmatch::supervised_loss_on_views(model, &weak_l, &labels)?;
        let (logits, pseudo_labels) = if cfg.mode == Mode::Supervised || unlabeled.is_empty() {
            (sup, vec![None; unlabeled.len()])
        } else {
            let out =
                fixmatch::unlabeled_loss_on_views(model, &weak_u, &strong_u, cfg.fixmatch.tau)?;
            (fixmatch::warmup_objective(sup, &out.loss), out.pseudo_labels)
        };
        let pass_count = pseudo_labels.iter().flatten().count();

        let (Some(bank), Some(pseudo)) = (self.bank, self.pseudo) else {
            let losses = StepLosses {
                logits: logits.value,
                margin: 0.0,
                total: logits.value,
                pass_count,
            };
            return Ok((logits.grads, losses, pseudo_labels));
        };

        let views_l: Vec<Vec<f64>> = match cfg.margin.view {
            MarginView::Strong => labeled
                .iter()
                .map(|&i| augment::strong(ds.feature(i), &cfg.augment, margin_rng))
                .collect(),
            MarginView::Weak => weak_l,
        };
        let views_u = match cfg.margin.view {
            MarginView::Strong => strong_u,
            MarginView::Weak => weak_u,
        };
        let targets_l: Vec<Option<usize>> = labels.iter().copied().map(Some).collect();
        let msup = proto::margin_batch_loss(model, bank, &views_l, &targets_l, &cfg.margin)?;
        let margin = if unlabeled.is_empty() {
            msup
        } else {
            let targets_u: Vec<Option<usize>> = unlabeled.iter().map(|&i| pseudo.get(i)).collect();
            let munsup = proto::margin_batch_loss(model, bank, &views_u, &targets_u, &cfg.margin)?;
            proto::total_margin(msup, &munsup)
        };
        let total: BatchLoss = logits.clone().plus_weighted(&margin, cfg.margin.lambda);
        let losses = StepLosses {
            logits: logits.value,
            margin: margin.value,
            total: total.value,
            pass_count,
        };
        Ok((total.grads, losses, pseudo_labels))
    }
}

/// FixMatch for the whole epoch budget, no offline events.
pub fn run_baseline_fixmatch(
    train: &FeatureDataset,
    test: &FeatureDataset,
    cfg: &RunConfig,
) -> Result<RunOutput> {
    let cfg = RunConfig {
        mode: Mode::Fixmatch,
        ..cfg.clone()
    };
    run(train, test, &cfg)
}

/// One configuration of the component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationRow {
    Ssl,
    SslKm,
    SslSskmWeak,
    SslSskmStrong,
    SslSskmStrongLa,
    SslSskmStrongSat,
    SslSskmStrongLaSat,
}

impl AblationRow {
    pub const ALL: [AblationRow; 7] = [
        AblationRow::Ssl,
        AblationRow::SslKm,
        AblationRow::SslSskmWeak,
        AblationRow::SslSskmStrong,
        AblationRow::SslSskmStrongLa,
        AblationRow::SslSskmStrongSat,
        AblationRow::SslSskmStrongLaSat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationRow::Ssl => "SSL",
            AblationRow::SslKm => "SSL+KM",
            AblationRow::SslSskmWeak => "SSL+SSKM(W)",
            AblationRow::SslSskmStrong => "SSL+SSKM(S)",
            AblationRow::SslSskmStrongLa => "SSL+SSKM(S)+LA",
            AblationRow::SslSskmStrongSat => "SSL+SSKM(S)+SAT",
            AblationRow::SslSskmStrongLaSat => "SSL+SSKM(S)+LA+SAT",
        }
    }

    /// `base` with this row's component switches applied.
    pub fn configure(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        if self == AblationRow::Ssl {
            cfg.mode = Mode::Fixmatch;
            return cfg;
        }
        cfg.mode = Mode::Aplt;
        cfg.cluster.method = if self == AblationRow::SslKm {
            ClusterMethod::KMeans
        } else {
            ClusterMethod::SemiSupervised
        };
        cfg.margin.view = if self == AblationRow::SslSskmWeak {
            MarginView::Weak
        } else {
            MarginView::Strong
        };
        cfg.cluster.use_labeled_aug = matches!(
            self,
            AblationRow::SslSskmStrongLa | AblationRow::SslSskmStrongLaSat
        );
        cfg.cluster.use_adaptive_threshold = matches!(
            self,
            AblationRow::SslSskmStrongSat | AblationRow::SslSskmStrongLaSat
        );
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub seed: u64,
    pub labeled_ratio: f64,
    pub summary: RunSummary,
}

pub const ABLATION_CSV_HEADER: &str =
    "row,seed,labeled_ratio,final_accuracy,final_proto_acc,final_param_acc,final_cluster_pl_accuracy,final_coverage";

impl AblationResult {
    pub fn csv_row(&self) -> String {
        use crate::metrics::opt;
        let s = &self.summary;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.row.name(),
            self.seed,
            self.labeled_ratio,
            s.final_accuracy,
            opt(s.final_proto_acc),
            s.final_param_acc,
            opt(s.final_cluster_pl_accuracy),
            opt(s.final_coverage),
        )
    }
}

/// Runs every ablation row on the same data and seed.
pub fn run_ablation_grid(
    train: &FeatureDataset,
    test: &FeatureDataset,
    base: &RunConfig,
) -> Result<Vec<AblationResult>> {
    AblationRow::ALL
        .iter()
        .map(|&row| {
            let out = run(train, test, &row.configure(base))?;
            Ok(AblationResult {
                row,
                seed: base.seed,
                labeled_ratio: base.split.labeled_ratio,
                summary: out.metrics.summary.expect("run always writes a summary"),
            })
        })
        .collect()
}

pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut s = String::from(ABLATION_CSV_HEADER);
    s.push('\n');
    for r in results {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Per-epoch pseudo-label trajectory of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub epoch: usize,
    pub method: String,
    pub pseudo_label_accuracy: Option<f64>,
    pub coverage: Option<f64>,
    pub test_accuracy: f64,
}

pub const TRAJECTORY_CSV_HEADER: &str = "epoch,method,pseudo_label_accuracy,coverage,test_accuracy";

/// For each epoch: the accuracy and coverage of the pseudo-labels the method
/// trains on. For FixMatch (and for warm-up epochs) that is the thresholded
/// parametric prediction; once clustering pseudo-labels exist, theirs.
pub fn trajectory(metrics: &RunMetrics, method: &str) -> Vec<TrajectoryRow> {
    metrics
        .epochs
        .iter()
        .map(|e| {
            let (acc, cov) = match (e.cluster_pl_accuracy, e.cluster_coverage) {
                (Some(a), Some(c)) => (Some(a), Some(c)),
                _ => (
                    e.fixmatch_pl_accuracy,
                    (e.unlabeled_seen > 0).then(|| e.pass_count as f64 / e.unlabeled_seen as f64),
                ),
            };
            TrajectoryRow {
                epoch: e.epoch,
                method: method.into(),
                pseudo_label_accuracy: acc,
                coverage: cov,
                test_accuracy: e.test_proto_acc.unwrap_or(e.test_param_acc),
            }
        })
        .collect()
}

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    use crate::metrics::opt;
    let mut s = String::from(TRAJECTORY_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.method,
            opt(r.pseudo_label_accuracy),
            opt(r.coverage),
            r.test_accuracy
        ));
    }
    s
}

/// FixMatch and APLT on the same data and seed, rows interleaved by epoch.
pub fn compare(
    train: &FeatureDataset,
    test: &FeatureDataset,
    cfg: &RunConfig,
) -> Result<(RunOutput, RunOutput, Vec<TrajectoryRow>)> {
    let fm = run_baseline_fixmatch(train, test, cfg)?;
    let aplt = run(
        train,
        test,
        &RunConfig {
            mode: Mode::Aplt,
            ..cfg.clone()
        },
    )?;
    let a = trajectory(&fm.metrics, "fixmatch");
    let b = trajectory(&aplt.metrics, "aplt");
    let rows = a
        .into_iter()
        .zip(b)
        .flat_map(|(x, y)| [x, y])
        .collect();
    Ok((fm, aplt, rows))
}
