//! Run metrics and their on-disk forms.
//!
//! The metrics log is newline-delimited JSON. Every line is an object with a
//! `"kind"` field:
//!
//! * `"epoch"`: one per training epoch, see [`EpochRecord`].
//! * `"offline"`: one per offline pseudo-labeling event, see [`OfflineRecord`].
//! * `"summary"`: the last line, see [`RunSummary`].
//!
//! Records carry no timestamps, so identical runs produce identical bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `"warmup"` or `"main"`.
    pub phase: String,
    pub lr: f64,
    pub steps: usize,
    /// Mean over steps of the parametric-head loss.
    pub loss_logits: f64,
    /// Mean over steps of the margin loss (0 without a bank).
    pub loss_margin: f64,
    /// Mean over steps of `loss_logits + lambda * loss_margin`.
    pub loss_total: f64,
    /// Unlabeled samples whose weak-view confidence reached tau.
    pub pass_count: usize,
    pub unlabeled_seen: usize,
    /// Accuracy of the thresholded parametric pseudo-labels. Evaluation only.
    pub fixmatch_pl_accuracy: Option<f64>,
    /// Accuracy and coverage of the active clustering pseudo-labels.
    pub cluster_pl_accuracy: Option<f64>,
    pub cluster_coverage: Option<f64>,
    pub test_proto_acc: Option<f64>,
    pub test_param_acc: f64,
    pub bank_fingerprint: Option<String>,
    pub pseudo_fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineRecord {
    pub epoch: usize,
    pub method: String,
    pub iterations_run: usize,
    pub objective: f64,
    pub monotone_violations: usize,
    pub num_unlabeled: usize,
    pub kept: usize,
    pub coverage: f64,
    pub tau_global: f64,
    pub tau_local: Vec<f64>,
    pub tau_adapt: Vec<f64>,
    pub empty_classes: Vec<usize>,
    /// Accuracy of kept pseudo-labels. Evaluation only.
    pub pseudo_label_accuracy: f64,
    /// Accuracy of every cluster assignment before filtering.
    pub cluster_accuracy: f64,
    pub bank_fingerprint: String,
    pub pseudo_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub seed: u64,
    pub epochs: usize,
    pub offline_events: usize,
    pub final_proto_acc: Option<f64>,
    pub final_param_acc: f64,
    /// Prototype accuracy when a bank exists, parametric accuracy otherwise.
    pub final_accuracy: f64,
    pub final_fixmatch_pl_accuracy: Option<f64>,
    pub final_cluster_pl_accuracy: Option<f64>,
    pub final_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Epoch(EpochRecord),
    Offline(OfflineRecord),
    Summary(RunSummary),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    pub offline: Vec<OfflineRecord>,
    pub summary: Option<RunSummary>,
}

impl RunMetrics {
    /// Records in chronological order: an offline event precedes the epoch
    /// it opens.
    pub fn records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.epochs.len() + self.offline.len() + 1);
        let mut offline = self.offline.iter().peekable();
        for e in &self.epochs {
            while let Some(o) = offline.next_if(|o| o.epoch <= e.epoch) {
                out.push(Record::Offline(o.clone()));
            }
            out.push(Record::Epoch(e.clone()));
        }
        out.extend(offline.map(|o| Record::Offline(o.clone())));
        if let Some(s) = &self.summary {
            out.push(Record::Summary(s.clone()));
        }
        out
    }

    pub fn to_ndjson(&self) -> String {
        let mut s = String::new();
        for r in self.records() {
            let _ = writeln!(s, "{}", serde_json::to_string(&r).expect("record serializes"));
        }
        s
    }

    pub fn from_ndjson(text: &str) -> serde_json::Result<Self> {
        let mut m = RunMetrics::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                Record::Epoch(e) => m.epochs.push(e),
                Record::Offline(o) => m.offline.push(o),
                Record::Summary(s) => m.summary = Some(s),
            }
        }
        Ok(m)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.summary.as_ref().map(|s| s.final_accuracy)
    }
}

/// Header of the run summary CSV.
pub const SUMMARY_CSV_HEADER: &str = "mode,seed,epochs,offline_events,final_accuracy,final_proto_acc,final_param_acc,final_fixmatch_pl_accuracy,final_cluster_pl_accuracy,final_coverage";

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl RunSummary {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.mode,
            self.seed,
            self.epochs,
            self.offline_events,
            self.final_accuracy,
            opt(self.final_proto_acc),
            self.final_param_acc,
            opt(self.final_fixmatch_pl_accuracy),
            opt(self.final_cluster_pl_accuracy),
            opt(self.final_coverage),
        )
    }
}
