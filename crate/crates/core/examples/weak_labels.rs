//! The labeling pipeline with a simulated expert: memories for several seeds,
//! budget planning, oracle labels, induced weak-label columns and majority
//! vote.
//!
//!     cargo run --example weak_labels

use memlabel::eval::score;
use memlabel::{
    build_distance_matrix, generate_synthetic, majority_vote, run_pipeline, Budget, DistanceFunction,
    MemoryGenConfig, OracleProvider, SyntheticSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::from_toml(include_str!("data/rhythms.toml"))?;
    let (ds, gt) = generate_synthetic(&spec, 11)?;
    let n_classes = spec.classes.len();
    let matrix = build_distance_matrix(&ds, &DistanceFunction::dtw())?;

    // the expert answers wrongly for about 10% of the samples
    let mut expert = OracleProvider::with_label_noise(&gt, n_classes, 0.1, 3);
    let out = run_pipeline(
        &ds,
        &matrix,
        &MemoryGenConfig::new(9.0, 0),
        &[1, 2, 3, 4],
        Budget::new(40),
        n_classes,
        &mut expert,
    )?;
    println!(
        "{} columns, {} of {} labels used, skipped seeds {:?}",
        out.matrix.n_functions(),
        out.budget.consumed,
        out.budget.limit,
        out.skipped_seeds
    );
    for (set, p) in out.memory_sets.iter().zip(&out.partitions) {
        let sizes: Vec<usize> = p.groups().values().map(Vec::len).collect();
        println!("seed {}: {} memories, group sizes {sizes:?}", set.seed, set.len());
    }

    print!("\n{}", out.matrix.to_text().lines().take(6).collect::<Vec<_>>().join("\n"));
    println!("\n...");

    let labels = majority_vote(&out.matrix, n_classes)?;
    let report = score(&labels, &gt, Some(1))?;
    println!("\nmajority vote accuracy {:.4}", report.accuracy);
    Ok(())
}
