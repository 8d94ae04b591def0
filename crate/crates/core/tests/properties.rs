mod common;

use aplt::cluster::{self, ClusterConfig, ClusterResult, PrototypeBank, PseudoLabelSet, Thresholds};
use aplt::config::{DataConfig, DataSource, Mode, PhaseSchedule, RunConfig};
use aplt::data::{self, apply_split, FeatureDataset, SplitSpec, SyntheticSpec};
use aplt::engine;
use aplt::fixmatch;
use aplt::nn::{self, EncoderModel, HeadInput, ModelShape};
use aplt::proto::{self, MarginConfig};
use aplt::rng::{self, Stream};
use proptest::prelude::*;
use rand::Rng as _;

use common::*;

fn small_cfg(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::hard_benchmark(seed);
    cfg.data = DataConfig {
        source: DataSource::Synthetic(SyntheticSpec {
            classes: 4,
            dim: 8,
            n_per_class: 30,
            overlap: 0.3,
            seed,
        }),
        test_fraction: 0.2,
    };
    cfg.split.labeled_ratio = 0.2;
    cfg.fixmatch.batch_size = 16;
    cfg.model.hidden = 16;
    cfg.model.embed = 8;
    cfg.schedule = PhaseSchedule {
        warmup_epochs: 3,
        main_epochs: 7,
        offline_every: 3,
        ..PhaseSchedule::default()
    };
    cfg
}

fn model(seed: u64, head_input: HeadInput) -> EncoderModel {
    let shape = ModelShape {
        input: 5,
        hidden: 7,
        embed: 4,
        classes: 3,
    };
    let mut m = EncoderModel::new(shape, true, &mut rng::stream(seed, Stream::Init)).unwrap();
    m.head_input = head_input;
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        logits in prop::collection::vec(-30.0f64..30.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let p = nn::softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let q = nn::softmax(&shifted);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn normalized_features_have_unit_norm(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let m = model(seed, HeadInput::Embedding);
        let mut r = rng(seed);
        let x: Vec<Vec<f64>> = random_rows(&mut r, 6, 5)
            .into_iter()
            .map(|v| v.into_iter().map(|a| a * scale).collect())
            .collect();
        for f in m.forward_features(&x).unwrap() {
            let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-6);
        }
        for p in m.forward_logits(&x).unwrap() {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_matches_finite_differences(seed in 0u64..10_000, features_head in any::<bool>()) {
        let head = if features_head { HeadInput::Features } else { HeadInput::Embedding };
        let m = model(seed, head);
        let mut r = rng(seed ^ 0xabc);
        let x = random_rows(&mut r, 3, 5);
        let labels: Vec<usize> = (0..3).map(|_| r.random_range(0..3)).collect();
        // Normalization is not differentiable at a vanishing embedding.
        prop_assume!(x.iter().all(|v| embedding_norm(&m, v) > 1e-3));
        let analytic = fixmatch::supervised_loss_on_views(&m, &x, &labels).unwrap();
        let numeric = numeric_gradient(&m, 1e-4, |p| {
            x.iter().zip(&labels).map(|(v, &y)| ce(&forward_one(p, v).1, y)).sum::<f64>() / 3.0
        });
        for (a, n) in analytic.grads.slices().iter().zip(&numeric) {
            for (&a, &n) in a.iter().zip(n) {
                prop_assert!(rel_err(a, n, 1e-6) < 1e-4, "analytic {a} numeric {n}");
            }
        }
    }

    #[test]
    fn thresholds_never_exceed_global(
        dists in prop::collection::vec(0.0f64..4.0, 1..60),
        c in 1usize..8,
        salt in any::<u64>(),
    ) {
        let mut r = rng(salt);
        let assignments: Vec<usize> = dists.iter().map(|_| r.random_range(0..c)).collect();
        let res = ClusterResult {
            centroids: vec![vec![0.0]; c],
            assignments,
            distances: dists.clone(),
            iterations_run: 1,
            objective_trace: vec![],
            objective: 0.0,
            monotone_violations: 0,
            cluster_classes: (0..c).collect(),
        };
        let t = cluster::adaptive_thresholds(&res, c).unwrap();
        prop_assert!(t.adapt.iter().all(|&a| a <= t.global + 1e-12));
        let cfg = ClusterConfig::default();
        let ids: Vec<usize> = (0..dists.len()).collect();
        let kept = cluster::filter_pseudo_labels(&res, &t, &ids, &cfg);
        prop_assert!(kept.coverage() <= 1.0);
        for &(id, y) in &kept.kept {
            prop_assert!(dists[id] <= t.adapt[y]);
        }
        let off = ClusterConfig { use_adaptive_threshold: false, ..cfg };
        prop_assert_eq!(cluster::filter_pseudo_labels(&res, &t, &ids, &off).len(), dists.len());
    }

    #[test]
    fn predict_ignores_monotone_score_transforms(seed in 0u64..1000, s in 0.001f64..1000.0) {
        let mut r = rng(seed);
        let bank = PrototypeBank {
            prototypes: random_rows(&mut r, 5, 6).iter().map(|p| unit(p)).collect(),
            counts: vec![1; 5],
            epoch: 0,
        };
        let q = random_rows(&mut r, 30, 6);
        let base = proto::predict(&bank, &q).unwrap();
        // Scaling the queries scales every score of a row by the same factor.
        let scaled: Vec<Vec<f64>> = q.iter().map(|v| v.iter().map(|x| x * s).collect()).collect();
        prop_assert_eq!(proto::predict(&bank, &scaled).unwrap(), base.clone());
        let brute: Vec<usize> = q
            .iter()
            .map(|v| {
                let scores: Vec<f64> = bank.prototypes.iter().map(|p| p.iter().zip(v).map(|(a, b)| a * b).sum()).collect();
                let mut best = 0;
                for k in 1..scores.len() {
                    if scores[k] > scores[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        prop_assert_eq!(base, brute);
    }

    #[test]
    fn stratified_split_counts(n in 4usize..40, c in 2usize..5, ratio in 0.01f64..0.99, seed in any::<u64>()) {
        let ds = data::generate_synthetic(c, 3, n, 0.2, seed).unwrap();
        let s = apply_split(&ds, &SplitSpec { labeled_ratio: ratio, seed, stratified: true }).unwrap();
        let want = ((ratio * n as f64).round() as usize).max(1);
        for class in 0..c {
            let got = (0..s.len()).filter(|&i| s.eval_label(i) == class && s.is_labeled(i)).count();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn csv_round_trip_is_exact(seed in any::<u64>(), c in 2usize..4, d in 2usize..5) {
        let ds = data::generate_synthetic(c, d, 4, 0.7, seed).unwrap();
        let ds = apply_split(&ds, &SplitSpec { labeled_ratio: 0.5, seed, stratified: true }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        data::save_csv(&ds, &path).unwrap();
        let back = data::load_csv(&path, Some(c)).unwrap();
        prop_assert_eq!(back, ds);
    }
}

#[test]
fn masked_samples_get_exactly_zero_gradient() {
    let m = model(3, HeadInput::Embedding);
    let mut r = rng(3);
    let x = random_rows(&mut r, 4, 5);
    let f = m.forward_features(&x).unwrap();
    let bank = PrototypeBank {
        prototypes: random_rows(&mut r, 3, 4).iter().map(|p| unit(p)).collect(),
        counts: vec![1; 3],
        epoch: 0,
    };
    let pseudo = PseudoLabelSet {
        kept: vec![(10, 2), (12, 0)],
        thresholds: Thresholds {
            global: 1.0,
            local: vec![1.0; 3],
            adapt: vec![1.0; 3],
            empty_classes: vec![],
        },
        num_unlabeled: 4,
    };
    let ids = [10, 11, 12, 13];
    let loss = proto::margin_loss_unlabeled(&bank, &f, &ids, &pseudo, &MarginConfig::default()).unwrap();
    assert_eq!(loss.pass_count, 2);
    for row in [1, 3] {
        assert!(loss.d_features[row * 4..(row + 1) * 4].iter().all(|&g| g == 0.0));
    }
    for row in [0, 2] {
        assert!(loss.d_features[row * 4..(row + 1) * 4].iter().any(|&g| g != 0.0));
    }
    let none = PseudoLabelSet { kept: vec![], ..pseudo };
    let zero = proto::margin_loss_unlabeled(&bank, &f, &ids, &none, &MarginConfig::default()).unwrap();
    assert_eq!(zero.value, 0.0);
}

#[test]
fn random_prototypes_score_near_chance() {
    let ds = data::generate_synthetic(12, 16, 250, 0.5, 8).unwrap();
    let m = EncoderModel::identity(16, 12);
    let n = ds.len() as f64;
    let sigma = (1.0 / 12.0 * 11.0 / 12.0 / n).sqrt();
    // One bank's accuracy depends on how its directions happen to align with
    // the class means; averaged over banks it is centred on chance.
    let accs: Vec<f64> = (0..20u64)
        .map(|k| {
            let mut r = rng(100 + k);
            let bank = PrototypeBank {
                prototypes: random_rows(&mut r, 12, 16).iter().map(|p| unit(p)).collect(),
                counts: vec![1; 12],
                epoch: 0,
            };
            engine::evaluate(&m, Some(&bank), &ds).unwrap().0.unwrap()
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 1.0 / 12.0).abs() < 3.0 * sigma, "mean accuracy {mean}, sigma {sigma}");
}

#[test]
fn hidden_labels_never_influence_training() {
    let cfg = small_cfg(11);
    let (train, test) = cfg.prepare_data().unwrap();
    let mut poisoned = train.clone();
    poisoned.poison_unlabeled_labels(99);
    assert_ne!(poisoned, train);
    let a = engine::run(&train, &test, &cfg).unwrap();
    let b = engine::run(&poisoned, &test, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.bank, b.bank);
    assert_eq!(a.pseudo, b.pseudo);
    let loss = |o: &engine::RunOutput| o.metrics.epochs.iter().map(|e| e.loss_total).collect::<Vec<_>>();
    assert_eq!(loss(&a), loss(&b));
}

#[test]
fn same_seed_same_metrics_and_different_seed_differs() {
    let cfg = small_cfg(5);
    let (train, test) = cfg.prepare_data().unwrap();
    let a = engine::run(&train, &test, &cfg).unwrap();
    let b = engine::run(&train, &test, &cfg).unwrap();
    assert_eq!(a.metrics.to_ndjson(), b.metrics.to_ndjson());
    let other = RunConfig { seed: 6, ..cfg.clone() };
    let c = engine::run(&train, &test, &other).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn metrics_log_round_trips() {
    let cfg = small_cfg(2);
    let (train, test) = cfg.prepare_data().unwrap();
    let out = engine::run(&train, &test, &cfg).unwrap();
    let text = out.metrics.to_ndjson();
    let back = aplt::metrics::RunMetrics::from_ndjson(&text).unwrap();
    assert_eq!(back, out.metrics);
    let kinds: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.last().map(String::as_str), Some("summary"));
    assert_eq!(kinds.iter().filter(|k| *k == "offline").count(), out.metrics.offline.len());
}

#[test]
fn schedule_event_count_formula() {
    for warmup in 0..4 {
        for main in 1..25 {
            for every in 1..12 {
                let s = PhaseSchedule {
                    warmup_epochs: warmup,
                    main_epochs: main,
                    offline_every: every,
                    ..PhaseSchedule::default()
                };
                assert_eq!(s.offline_epochs().len(), 1 + (main - 1) / every);
                assert_eq!(s.offline_epochs()[0], warmup);
            }
        }
    }
}

#[test]
fn sync_and_async_modes_both_complete() {
    let mut cfg = small_cfg(7);
    let (train, test) = cfg.prepare_data().unwrap();
    let asy = engine::run(&train, &test, &cfg).unwrap();
    cfg.schedule.sync_mode = true;
    let syn = engine::run(&train, &test, &cfg).unwrap();
    assert_eq!(asy.metrics.offline.len(), 3);
    assert_eq!(syn.metrics.offline.len(), cfg.schedule.main_epochs);
    for e in syn.metrics.epochs.iter().skip(cfg.schedule.warmup_epochs) {
        assert!(e.bank_fingerprint.is_some());
    }
}

#[test]
fn every_ablation_variant_runs() {
    let cfg = small_cfg(9);
    let (train, test) = cfg.prepare_data().unwrap();
    let rows = engine::run_ablation_grid(&train, &test, &cfg).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.row.name()).collect();
    assert_eq!(
        names,
        ["SSL", "SSL+KM", "SSL+SSKM(W)", "SSL+SSKM(S)", "SSL+SSKM(S)+LA", "SSL+SSKM(S)+SAT", "SSL+SSKM(S)+LA+SAT"]
    );
    assert!(rows[0].summary.final_proto_acc.is_none());
    assert!(rows[1..].iter().all(|r| r.summary.offline_events == 3));
    // Without adaptive thresholds every clustered sample is kept.
    for r in [&rows[1], &rows[3], &rows[4]] {
        assert_eq!(r.summary.final_coverage, Some(1.0));
    }
}

#[test]
fn supervised_mode_ignores_unlabeled_data() {
    let mut cfg = small_cfg(4);
    cfg.mode = Mode::Supervised;
    let (train, test) = cfg.prepare_data().unwrap();
    let out = engine::run(&train, &test, &cfg).unwrap();
    assert!(out.metrics.epochs.iter().all(|e| e.pass_count == 0 && e.loss_margin == 0.0));
    assert!(out.bank.is_none());
}

#[test]
fn easy_benchmark_fixmatch_is_accurate() {
    let mut cfg = RunConfig::hard_benchmark(0);
    cfg.data.source = DataSource::Synthetic(SyntheticSpec::easy(0));
    let (train, test) = cfg.prepare_data().unwrap();
    let out = engine::run_baseline_fixmatch(&train, &test, &cfg).unwrap();
    let acc = out.metrics.final_accuracy().unwrap();
    assert!(acc >= 0.95, "easy benchmark accuracy {acc}");
}

#[test]
fn training_rejects_an_unlabeled_class() {
    let ds = data::generate_synthetic(3, 4, 10, 0.1, 0).unwrap();
    let labels: Vec<usize> = (0..ds.len()).map(|i| ds.eval_label(i)).collect();
    let mask: Vec<bool> = labels.iter().enumerate().map(|(i, &y)| y != 2 && i % 2 == 0).collect();
    let bad = FeatureDataset::new(ds.features().to_vec(), labels, mask, 3).unwrap();
    assert!(matches!(
        engine::run(&bad, &ds, &small_cfg(0)),
        Err(aplt::Error::MissingLabeledClass { class: 2 })
    ));
}
