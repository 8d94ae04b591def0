//! Runs every ablation row over a few seeds and prints the mean accuracy
//! per row.
//!
//! ```text
//! cargo run --release --example ablation_grid -- 0 1 2
//! ```

use aplt::config::RunConfig;
use aplt::engine::{self, AblationRow};

fn main() -> aplt::Result<()> {
    let seeds: Vec<u64> = std::env::args()
        .skip(1)
        .map(|s| s.parse().expect("seeds must be integers"))
        .collect();
    let seeds = if seeds.is_empty() { vec![0, 1, 2] } else { seeds };

    let mut totals = vec![0.0; AblationRow::ALL.len()];
    for &seed in &seeds {
        let cfg = RunConfig::hard_benchmark(seed);
        let (train, test) = cfg.prepare_data()?;
        for (k, r) in engine::run_ablation_grid(&train, &test, &cfg)?.iter().enumerate() {
            totals[k] += r.summary.final_accuracy;
        }
    }
    for (row, total) in AblationRow::ALL.iter().zip(totals) {
        println!("{:<20} {:.4}", row.name(), total / seeds.len() as f64);
    }
    Ok(())
}
