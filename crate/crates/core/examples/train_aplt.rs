//! Trains APLT on the hard benchmark and prints every epoch and offline
//! event.
//!
//! ```text
//! cargo run --release --example train_aplt -- margin.lambda=0.5
//! ```
//!
//! Arguments are `key=value` config overrides.

use aplt::config::RunConfig;
use aplt::engine;

fn main() -> aplt::Result<()> {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let cfg = RunConfig::hard_benchmark(0).with_overrides(&overrides)?;
    let (train, test) = cfg.prepare_data()?;
    let out = engine::run(&train, &test, &cfg)?;

    let mut offline = out.metrics.offline.iter().peekable();
    println!("epoch  phase   loss    proto   param");
    for e in &out.metrics.epochs {
        while let Some(o) = offline.next_if(|o| o.epoch == e.epoch) {
            println!(
                "  offline: {} iterations, kept {}/{}, pseudo-label accuracy {:.3}",
                o.iterations_run, o.kept, o.num_unlabeled, o.pseudo_label_accuracy
            );
        }
        let proto = e.test_proto_acc.map_or("-".into(), |p| format!("{p:.4}"));
        println!(
            "{:<6} {:<7} {:<7.4} {:<7} {:.4}",
            e.epoch, e.phase, e.loss_total, proto, e.test_param_acc
        );
    }
    let s = out.metrics.summary.expect("summary");
    println!("final accuracy {:.4}", s.final_accuracy);
    Ok(())
}
