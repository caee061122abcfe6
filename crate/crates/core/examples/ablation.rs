//! Threshold sweep: smaller thresholds mean more memories per seed, so fewer
//! seeds fit in the same budget.
//!
//!     cargo run --example ablation

use memlabel::eval::{ablation_sweep, ablation_table, EvalParams};
use memlabel::{build_distance_matrix, generate_synthetic, Aggregator, DistanceFunction, EmOptions, MemoryGenConfig, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::from_toml(include_str!("data/rhythms.toml"))?;
    let (ds, gt) = generate_synthetic(&spec, 11)?;
    let matrix = build_distance_matrix(&ds, &DistanceFunction::dtw())?;
    let params = EvalParams {
        memory: MemoryGenConfig::new(1.0, 0),
        seeds: vec![1, 2, 3, 4, 5],
        budget: 60,
        em: EmOptions::default(),
    };
    let thresholds = [4.0, 6.0, 9.0, 12.0, 2.0 * matrix.diameter()];
    let rows = ablation_sweep(
        &ds,
        &matrix,
        &gt,
        spec.classes.len(),
        &thresholds,
        &params,
        &[Aggregator::Majority, Aggregator::LabelModel],
    )?;
    print!("{}", ablation_table(&rows));
    Ok(())
}
