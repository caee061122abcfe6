//! Fits the EM label model to votes drawn from known labeling-function
//! accuracies and compares it with majority vote.
//!
//!     cargo run --example label_model

use memlabel::weak_label::WeakLabelMatrix;
use memlabel::{fit_label_model, majority_vote, predict, EmOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> memlabel::Result<()> {
    let accuracies = [0.9, 0.7, 0.6];
    let n = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut truth = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..2usize);
        truth.push(y);
        rows.push(
            accuracies
                .iter()
                .map(|&a| Some(if rng.random_bool(a) { y } else { 1 - y }))
                .collect::<Vec<_>>(),
        );
    }
    let ids = (0..n).map(|i| format!("x{i}")).collect();
    let names = vec!["lf_a".to_string(), "lf_b".into(), "lf_c".into()];
    let m = WeakLabelMatrix::from_rows(ids, names.clone(), rows)?;

    // the class balance is known here; fixing it keeps EM from trading prior
    // mass against accuracies
    let opts = EmOptions {
        fixed_prior: Some(vec![0.5, 0.5]),
        ..EmOptions::default()
    };
    let fit = fit_label_model(&m, 2, &opts)?;
    println!("EM: {} iterations, converged {}", fit.iterations, fit.converged);
    for (k, a) in accuracies.iter().enumerate() {
        println!(
            "{}: true accuracy {a:.2}, fitted {:.3} / {:.3}",
            names[k],
            fit.params.accuracy(k, 0),
            fit.params.accuracy(k, 1)
        );
    }
    print!("\n{}", fit.params.to_text(&names));

    let acc = |labels: Vec<usize>| labels.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / n as f64;
    let lm = acc(predict(&fit.params, &m)?.hard_labels());
    let mv = acc(majority_vote(&m, 2)?.hard_labels());
    println!("\naccuracy: label model {lm:.4}, majority vote {mv:.4}");
    Ok(())
}
