//! Labels memories at the terminal. Answers go to a journal, so an aborted
//! session resumes where it stopped when the example is run again.
//!
//!     cargo run --example interactive_labeling [-- <journal path>]

use std::io;

use memlabel::{
    build_distance_matrix, generate_synthetic, majority_vote, run_pipeline, Budget, DistanceFunction,
    InteractiveProvider, LabelSession, MemoryGenConfig, SyntheticSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let journal = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("memlabel-interactive.journal"));
    let spec = SyntheticSpec::from_toml(include_str!("data/rhythms.toml"))?;
    let (ds, _) = generate_synthetic(&spec, 11)?;
    let space = spec.label_space()?;
    let matrix = build_distance_matrix(&ds, &DistanceFunction::dtw())?;

    let session = LabelSession::open(&journal, "interactive-demo", space.clone(), 24)?;
    println!("journal {} ({} labels so far)", journal.display(), session.consumed());
    let mut provider = InteractiveProvider::new(io::stdin().lock(), io::stdout(), session);
    let out = run_pipeline(
        &ds,
        &matrix,
        &MemoryGenConfig::new(12.0, 0),
        &[1, 2],
        Budget::new(24),
        space.len(),
        &mut provider,
    )?;
    let labels = majority_vote(&out.matrix, space.len())?;
    let counts = labels.hard_labels().iter().fold(vec![0; space.len()], |mut c, &y| {
        c[y] += 1;
        c
    });
    for (name, n) in space.classes().iter().zip(counts) {
        println!("{name}: {n}");
    }
    Ok(())
}
