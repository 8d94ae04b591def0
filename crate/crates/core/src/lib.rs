//! Semi-supervised classification on feature vectors with asynchronous
//! pseudo-labeling and training (APLT).
//!
//! A small MLP encoder is first trained with FixMatch. Afterwards training
//! alternates between an offline phase, which clusters the encoder's
//! features with labeled anchors, filters the resulting pseudo-labels with
//! per-class adaptive thresholds and builds a frozen prototype bank, and an
//! online phase that adds a prototype margin loss to the FixMatch objective.
//! Predictions come from the nearest prototype.
//!
//! ```no_run
//! use aplt::config::RunConfig;
//! use aplt::engine;
//!
//! let cfg = RunConfig::hard_benchmark(0);
//! let (train, test) = cfg.prepare_data()?;
//! let out = engine::run(&train, &test, &cfg)?;
//! println!("{:?}", out.metrics.final_accuracy());
//! # Ok::<(), aplt::Error>(())
//! ```

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod fixmatch;
pub mod metrics;
pub mod nn;
pub mod proto;
pub mod rng;

pub use error::{Error, Result};
