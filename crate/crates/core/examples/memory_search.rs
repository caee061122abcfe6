//! Memory generation with a per-restart trace.
//!
//! Every restart starts from a threshold cover and improves it by swapping
//! memories with random non-memories; the best restart wins.
//!
//!     cargo run --example memory_search [-- <threshold>]

use memlabel::memory::generate_memories_traced;
use memlabel::{build_distance_matrix, generate_synthetic, DistanceFunction, MemoryGenConfig, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(8.0);
    let spec = SyntheticSpec::from_toml(include_str!("data/rhythms.toml"))?;
    let (ds, _) = generate_synthetic(&spec, 11)?;
    let matrix = build_distance_matrix(&ds, &DistanceFunction::dtw())?;
    println!("{} series, diameter {:.2}, t = {t}", ds.len(), matrix.diameter());

    let (best, trace) = generate_memories_traced(&matrix, &MemoryGenConfig::new(t, 42))?;
    for (g, r) in trace.restarts.iter().enumerate() {
        println!(
            "restart {g}: {} memories, cost {:.3} -> {:.3} ({} swaps accepted)",
            r.initial.len(),
            r.initial_cost,
            r.final_cost,
            r.accepted_costs.len()
        );
    }
    println!("best restart {}, cost {:.3}", trace.best_restart, best.cost);
    let ids: Vec<&str> = best.indices.iter().map(|&i| ds.id(i)).collect();
    println!("memories: {}", ids.join(" "));
    Ok(())
}
