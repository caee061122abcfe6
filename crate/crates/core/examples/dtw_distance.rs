//! Pairwise distances for each modality and the cached distance matrix.
//!
//!     cargo run --example dtw_distance

use memlabel::distance::{dtw_distance, euclidean_distance, symmetric_kl_distance, DEFAULT_KL_EPS};
use memlabel::{build_distance_matrix, Dataset, DistanceFunction, Modality, Sample};

fn main() -> memlabel::Result<()> {
    // a shifted copy is free under DTW but not under a pointwise metric
    let a = [0.0, 1.0, 2.0, 1.0, 0.0];
    let b = [0.0, 0.0, 1.0, 2.0, 1.0, 0.0];
    println!("dtw({a:?}, {b:?}) = {}", dtw_distance(&a, &b)?);
    println!("dtw([1,2,3], [2,2,2,2]) = {}", dtw_distance(&[1.0, 2.0, 3.0], &[2.0; 4])?);

    println!("euclidean([0,0], [3,4]) = {}", euclidean_distance(&[0.0, 0.0], &[3.0, 4.0])?);
    let kl = symmetric_kl_distance(&[0.7, 0.3], &[0.4, 0.6], DEFAULT_KL_EPS)?;
    println!("symmetric KL([0.7,0.3], [0.4,0.6]) = {kl:.6}");

    let series = [
        ("flat", vec![0.0, 0.0, 0.0, 0.0]),
        ("bump", vec![0.0, 2.0, 0.0, 0.0]),
        ("late-bump", vec![0.0, 0.0, 0.0, 2.0, 0.0]),
        ("ramp", vec![0.0, 1.0, 2.0, 3.0]),
    ];
    let ds = Dataset::new(
        Modality::TimeSeries,
        series
            .iter()
            .map(|(id, v)| Sample {
                id: id.to_string(),
                values: v.clone(),
            })
            .collect(),
    )?;
    let m = build_distance_matrix(&ds, &DistanceFunction::dtw())?;
    let header: Vec<String> = (0..ds.len()).map(|j| format!("{:>10}", ds.id(j))).collect();
    println!("\n{:>10} {}", "", header.join(""));
    for i in 0..ds.len() {
        let row: Vec<String> = (0..ds.len()).map(|j| format!("{:>10.1}", m.get(i, j))).collect();
        println!("{:>10} {}", ds.id(i), row.join(""));
    }
    println!("diameter {}", m.diameter());

    let path = std::env::temp_dir().join("memlabel-example-distances.txt");
    m.write(&path)?;
    println!("cached to {}", path.display());
    Ok(())
}
