//! Trains a short run, saves a checkpoint, reloads it and checks that the
//! reloaded model evaluates identically.
//!
//! ```text
//! cargo run --release --example checkpoint_eval
//! ```

use aplt::checkpoint::Checkpoint;
use aplt::config::RunConfig;
use aplt::engine;

fn main() -> aplt::Result<()> {
    let cfg = RunConfig::hard_benchmark(0)
        .with_overrides(&["schedule.warmup_epochs=5".into(), "schedule.main_epochs=10".into()])?;
    let (train, test) = cfg.prepare_data()?;
    let out = engine::run(&train, &test, &cfg)?;
    let before = engine::evaluate(&out.model, out.bank.as_ref(), &test)?;

    let path = std::env::temp_dir().join("aplt-example-checkpoint.json");
    Checkpoint::new(out.model, out.bank).save(&path)?;
    let ck = Checkpoint::load(&path)?;
    let after = engine::evaluate(&ck.model, ck.bank.as_ref(), &test)?;
    assert_eq!(before, after);
    println!(
        "checkpoint {} reproduces proto {:.4}, param {:.4}",
        path.display(),
        after.0.unwrap_or(f64::NAN),
        after.1
    );
    Ok(())
}
