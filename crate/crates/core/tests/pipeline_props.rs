mod common;

use std::collections::HashSet;

use common::{euclidean_matrix, points, rng};
use memlabel::memory::{generate_memories_traced, nearest_memory};
use memlabel::weak_label::partition_indices;
use memlabel::{
    compute_cost, generate_synthetic, run_pipeline, Budget, Dataset, GroundTruth, LabelQuery, LabelSession, LabelSpace,
    MemoryGenConfig, Modality, OracleProvider, Sample,
};
use proptest::collection::vec;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn memory_search_trace_invariants(
        seed in any::<u64>(),
        n in 2usize..40,
        dim in 1usize..4,
        t in 0.5..6.0f64,
        restarts in 1usize..6,
    ) {
        let ds = points(&mut rng(seed), n, dim, 10.0);
        let m = euclidean_matrix(&ds);
        let cfg = MemoryGenConfig {
            max_global_steps: restarts,
            max_local_steps: 20,
            distance_threshold: t,
            seed,
        };
        let (set, trace) = generate_memories_traced(&m, &cfg).unwrap();
        prop_assert_eq!(trace.restarts.len(), restarts);

        for r in &trace.restarts {
            for i in 0..n {
                prop_assert!(nearest_memory(&m, &r.initial, i).1 <= t, "sample {} uncovered", i);
            }
            let mut prev = r.initial_cost;
            for &c in &r.accepted_costs {
                prop_assert!(c < prev, "{c} after {prev}");
                prev = c;
            }
            prop_assert_eq!(r.final_cost, prev);
            prop_assert_eq!(r.final_memories.len(), r.initial.len());
            let distinct: HashSet<_> = r.final_memories.iter().collect();
            prop_assert_eq!(distinct.len(), r.final_memories.len());
            prop_assert!(r.final_memories.iter().all(|&i| i < n));
            prop_assert!((compute_cost(&m, &r.final_memories).unwrap() - r.final_cost).abs() < 1e-9);
            prop_assert!(set.cost <= r.initial_cost);
        }
        let best = trace.restarts.iter().map(|r| r.final_cost).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(set.cost, best);
        prop_assert_eq!(&set.indices, &trace.restarts[trace.best_restart].final_memories);
    }

    #[test]
    fn partition_assigns_a_nearest_memory(
        seed in any::<u64>(),
        n in 1usize..50,
        picks in vec(any::<prop::sample::Index>(), 1..8),
    ) {
        let ds = points(&mut rng(seed), n, 2, 5.0);
        let m = euclidean_matrix(&ds);
        let mut memories: Vec<usize> = picks.iter().map(|p| p.index(n)).collect();
        memories.sort_unstable();
        memories.dedup();
        let p = partition_indices(&m, &memories).unwrap();
        for i in 0..n {
            let best = memories.iter().map(|&j| m.get(i, j)).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(m.get(i, p.memory_of(i)), best);
            prop_assert!(memories.contains(&p.memory_of(i)));
        }
        for &j in &memories {
            prop_assert_eq!(p.memory_of(j), j);
        }
    }

    #[test]
    fn pipeline_respects_budget_and_group_labels(
        data_seed in any::<u64>(),
        t in 0.3..3.0f64,
        budget in 0usize..80,
        n_seeds in 1usize..5,
    ) {
        let spec = common::blobs(&[15, 15, 10], 3.0, 0.6);
        let (ds, gt) = generate_synthetic(&spec, data_seed).unwrap();
        let m = euclidean_matrix(&ds);
        let seeds: Vec<u64> = (1..=n_seeds as u64).collect();
        let mut oracle = OracleProvider::new(gt.clone());
        let out = match run_pipeline(&ds, &m, &MemoryGenConfig::new(t, 0), &seeds, Budget::new(budget), 3, &mut oracle) {
            Ok(out) => out,
            Err(memlabel::Error::BudgetInfeasible(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let queried: usize = out.memory_sets.iter().map(|s| s.len()).sum();
        prop_assert_eq!(out.budget.consumed, queried);
        prop_assert!(out.budget.consumed <= budget);
        prop_assert!(out.matrix.n_functions() <= budget / 3);
        for (k, (p, labels)) in out.partitions.iter().zip(&out.memory_labels).enumerate() {
            for (&mem, &y) in labels {
                prop_assert_eq!(Some(y), gt.get(ds.id(mem)));
            }
            for i in 0..ds.len() {
                prop_assert_eq!(out.matrix.row(i)[k], Some(labels[&p.memory_of(i)]));
            }
        }
    }

    #[test]
    fn session_budget_ledger(
        limit in 0usize..12,
        ops in vec((0usize..20, 0usize..4), 0..60),
    ) {
        let space = LabelSpace::new(["a", "b", "c"]).unwrap();
        let mut session = LabelSession::in_memory("p", space, limit);
        let queries: Vec<LabelQuery> = (0..15).map(|i| LabelQuery::new(i % 3, i as usize, &format!("x{i}"))).collect();
        session.register(&queries).unwrap();
        let mut accepted = 0;
        for (q, class) in ops {
            let id = queries.get(q).map_or_else(|| format!("nope{q}"), |q| q.query_id.clone());
            if session.submit(&id, class).is_ok() {
                accepted += 1;
            }
            prop_assert!(session.consumed() <= limit);
            prop_assert_eq!(session.consumed(), accepted);
        }
        prop_assert_eq!(session.accepted().count(), accepted);
    }
}

#[test]
fn same_sample_under_two_seeds_is_charged_twice() {
    let ds = Dataset::new(
        Modality::FeatureVector,
        vec![
            Sample { id: "a".into(), values: vec![0.0] },
            Sample { id: "b".into(), values: vec![10.0] },
        ],
    )
    .unwrap();
    let m = euclidean_matrix(&ds);
    let gt = GroundTruth::new([("a".to_string(), 0), ("b".to_string(), 1)].into());
    let mut oracle = OracleProvider::new(gt);
    let out = run_pipeline(&ds, &m, &MemoryGenConfig::new(1.0, 0), &[1, 2, 3], Budget::new(6), 2, &mut oracle).unwrap();
    assert!(out.memory_sets.iter().all(|s| s.indices == [0, 1]));
    assert_eq!(out.budget.consumed, 6);
    assert_eq!(out.matrix.n_functions(), 3);
}
