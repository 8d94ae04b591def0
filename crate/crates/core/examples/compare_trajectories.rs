//! Trains FixMatch and APLT on the same data and writes their pseudo-label
//! trajectories as CSV to stdout.
//!
//! ```text
//! cargo run --release --example compare_trajectories -- 3 > trajectory.csv
//! ```

use aplt::config::RunConfig;
use aplt::engine;

fn main() -> aplt::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let cfg = RunConfig::hard_benchmark(seed);
    let (train, test) = cfg.prepare_data()?;
    let (fm, aplt, rows) = engine::compare(&train, &test, &cfg)?;
    print!("{}", engine::trajectory_csv(&rows));
    eprintln!(
        "fixmatch {:.4}, aplt {:.4}",
        fm.metrics.final_accuracy().unwrap_or(0.0),
        aplt.metrics.final_accuracy().unwrap_or(0.0)
    );
    Ok(())
}
