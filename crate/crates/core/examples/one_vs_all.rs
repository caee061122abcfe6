//! One-vs-all evaluation on a three-class feature-vector dataset.
//!
//!     cargo run --example one_vs_all

use memlabel::eval::{one_vs_all_suite, EvalParams};
use memlabel::{build_distance_matrix, generate_synthetic, Aggregator, DistanceFunction, EmOptions, MemoryGenConfig, SyntheticSpec};

const SPEC: &str = r#"
modality = "feature-vector"

[[class]]
name = "cat"
count = 60
center = [0.0, 0.0]
dispersion = 0.6

[[class]]
name = "dog"
count = 60
center = [5.0, 0.0]
dispersion = 0.6

[[class]]
name = "bird"
count = 60
center = [0.0, 5.0]
dispersion = 0.6
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::from_toml(SPEC)?;
    let (ds, gt) = generate_synthetic(&spec, 4)?;
    let matrix = build_distance_matrix(&ds, &DistanceFunction::euclidean())?;
    let params = EvalParams {
        memory: MemoryGenConfig::new(2.0, 0),
        seeds: vec![1, 2, 3],
        budget: 60,
        em: EmOptions::default(),
    };
    let summary = one_vs_all_suite(&ds, &matrix, &gt, &spec.label_space()?, &params, Aggregator::Majority)?;
    print!("{}", summary.to_table());
    Ok(())
}
