//! Generates the bundled two-class time-series spec and prints previews.
//!
//!     cargo run --example synthetic_dataset [-- <spec.toml> [seed]]

use memlabel::labeling::preview_text;
use memlabel::{generate_synthetic, SyntheticSpec};

const BUNDLED: &str = include_str!("data/rhythms.toml");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let spec = match args.next() {
        Some(path) => SyntheticSpec::load(path)?,
        None => SyntheticSpec::from_toml(BUNDLED)?,
    };
    let seed = match args.next() {
        Some(s) => s.parse()?,
        None => spec.seed.unwrap_or(0),
    };
    let (ds, gt) = generate_synthetic(&spec, seed)?;
    let space = spec.label_space()?;
    println!("{} samples, modality {}", ds.len(), ds.modality().as_str());
    for i in 0..8.min(ds.len()) {
        let class = gt.get(ds.id(i)).and_then(|c| space.name(c)).unwrap_or("?");
        println!("{:<12} {}", class, preview_text(&ds, i));
    }
    Ok(())
}
