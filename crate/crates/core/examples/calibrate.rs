//! Sweeps the class overlap of the hard benchmark and reports the test
//! accuracy of a labeled-only run next to FixMatch and APLT.
//!
//! ```text
//! cargo run --release --example calibrate -- 0.4 0.5 0.6 schedule.steps_per_epoch=50
//! ```
//!
//! Numeric arguments are overlaps; `key=value` arguments are config overrides.

use aplt::config::{DataSource, Mode, RunConfig};
use aplt::engine;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() -> aplt::Result<()> {
    let (overrides, overlaps): (Vec<String>, Vec<String>) =
        std::env::args().skip(1).partition(|a| a.contains('='));
    let overlaps: Vec<f64> = overlaps
        .iter()
        .map(|a| a.parse().expect("overlap must be a number"))
        .collect();
    let overlaps = if overlaps.is_empty() {
        vec![aplt::data::SyntheticSpec::HARD_OVERLAP]
    } else {
        overlaps
    };
    let seeds = 0..5u64;
    println!("overlap  supervised  fixmatch  aplt");
    for overlap in overlaps {
        let mut acc = [Vec::new(), Vec::new(), Vec::new()];
        for seed in seeds.clone() {
            let mut cfg = RunConfig::hard_benchmark(seed).with_overrides(&overrides)?;
            if let DataSource::Synthetic(spec) = &mut cfg.data.source {
                spec.overlap = overlap;
            }
            let (train, test) = cfg.prepare_data()?;
            for (slot, mode) in [Mode::Supervised, Mode::Fixmatch, Mode::Aplt].into_iter().enumerate() {
                let run = engine::run(&train, &test, &RunConfig { mode, ..cfg.clone() })?;
                acc[slot].push(run.metrics.final_accuracy().unwrap_or(0.0));
            }
        }
        println!(
            "{overlap:<8} {:<11.4} {:<9.4} {:.4}",
            mean(&acc[0]),
            mean(&acc[1]),
            mean(&acc[2])
        );
    }
    Ok(())
}
