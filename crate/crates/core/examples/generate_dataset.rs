//! Generates the hard synthetic benchmark, applies the labeled split and
//! round-trips it through CSV.
//!
//! ```text
//! cargo run --release --example generate_dataset -- 7
//! ```

use aplt::data::{self, SplitSpec, SyntheticSpec};

fn main() -> aplt::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let spec = SyntheticSpec::hard(seed);
    let ds = spec.generate()?;
    let split = data::apply_split(&ds, &SplitSpec { labeled_ratio: 0.1, seed, stratified: true })?;
    println!(
        "{} samples, {} classes, {} features, {} labeled",
        split.len(),
        split.num_classes(),
        split.dim(),
        split.labeled_indices().len()
    );

    let mut per_class = vec![0usize; split.num_classes()];
    for i in split.labeled_indices() {
        per_class[split.label(i).expect("labeled")] += 1;
    }
    println!("labeled per class: {per_class:?}");

    let path = std::env::temp_dir().join(format!("aplt-hard-{seed}.csv"));
    data::save_csv(&split, &path)?;
    let back = data::load_csv(&path, None)?;
    assert_eq!(back.features(), split.features());
    assert_eq!(back.labeled_mask(), split.labeled_mask());
    println!("round trip through {} is exact", path.display());
    Ok(())
}
