//! One offline event on raw features: semi-supervised k-means, adaptive
//! thresholds, pseudo-label filtering and the prototype classifier.
//!
//! ```text
//! cargo run --release --example offline_clustering
//! ```

use aplt::augment::AugmentConfig;
use aplt::cluster::{self, ClusterConfig};
use aplt::data::{self, SplitSpec, SyntheticSpec};
use aplt::nn::EncoderModel;
use aplt::proto;
use aplt::rng::{self, Stream};

fn main() -> aplt::Result<()> {
    let seed = 0;
    let spec = SyntheticSpec { overlap: 0.25, ..SyntheticSpec::hard(seed) };
    let ds = data::apply_split(&spec.generate()?, &SplitSpec { labeled_ratio: 0.1, seed, stratified: true })?;

    let encoder = EncoderModel::identity(ds.dim(), ds.num_classes());
    let cfg = ClusterConfig::default();
    let mut aug = rng::stream(seed, Stream::OfflineAugment);
    let feats = cluster::extract_all_features(&encoder, &ds, &cfg, &AugmentConfig::default(), &mut aug)?;
    let out = cluster::offline_phase(&feats, ds.num_classes(), &cfg, 0)?;

    let hits = |pairs: &mut dyn Iterator<Item = (usize, usize)>| {
        let v: Vec<bool> = pairs.map(|(id, y)| ds.eval_label(id) == y).collect();
        v.iter().filter(|&&h| h).count() as f64 / v.len().max(1) as f64
    };
    let all = hits(&mut feats.unlabeled_ids.iter().copied().zip(out.result.assignments.iter().copied()));
    let kept = hits(&mut out.pseudo.kept.iter().copied());
    println!("{} iterations, objective {:.3}", out.result.iterations_run, out.result.objective);
    println!("tau_global {:.4}", out.pseudo.thresholds.global);
    println!("tau_adapt  {:.4?}", out.pseudo.thresholds.adapt);
    println!(
        "assignment accuracy {all:.3}; kept {} of {} at accuracy {kept:.3}",
        out.pseudo.len(),
        feats.unlabeled.len()
    );

    let predicted = proto::predict(&out.bank, &feats.unlabeled)?;
    let proto_acc = hits(&mut feats.unlabeled_ids.iter().copied().zip(predicted));
    println!("prototype classifier on unlabeled samples {proto_acc:.3}");
    Ok(())
}
