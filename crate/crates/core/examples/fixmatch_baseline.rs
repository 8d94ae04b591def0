//! Runs the FixMatch baseline alone and reports how many unlabeled samples
//! pass the confidence threshold each epoch.
//!
//! ```text
//! cargo run --release --example fixmatch_baseline -- fixmatch.tau=0.8
//! ```

use aplt::config::RunConfig;
use aplt::engine;

fn main() -> aplt::Result<()> {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let cfg = RunConfig::hard_benchmark(0).with_overrides(&overrides)?;
    let (train, test) = cfg.prepare_data()?;
    let out = engine::run_baseline_fixmatch(&train, &test, &cfg)?;

    println!("epoch  passed/seen  pl_acc  test");
    for e in &out.metrics.epochs {
        let pl = e.fixmatch_pl_accuracy.map_or("-".into(), |a| format!("{a:.3}"));
        println!(
            "{:<6} {:>5}/{:<5}  {:<6}  {:.4}",
            e.epoch, e.pass_count, e.unlabeled_seen, pl, e.test_param_acc
        );
    }
    println!("final accuracy {:.4}", out.metrics.final_accuracy().unwrap_or(0.0));
    Ok(())
}
