//! Memory generation: randomized-restart local search for a set of medoids
//! ("memories") minimizing the partitioning cost
//!
//! ```text
//! cost(M) = Σ_i min_{m ∈ M} d(m, x_i)
//! ```
//!
//! Each restart seeds a greedy threshold cover, so every sample starts within
//! `t` of a memory and the number of memories `r` falls out of `t`. Local
//! steps then swap one memory for a member of its own group and keep the
//! swap only when the cost strictly drops. The best restart wins.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{content_lines, Dataset};
use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_GLOBAL_STEPS: usize = 5;
pub const DEFAULT_LOCAL_STEPS: usize = 30;

/// Tolerance when re-checking a stored cost against a recomputation.
pub const COST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryGenConfig {
    pub max_global_steps: usize,
    pub max_local_steps: usize,
    pub distance_threshold: f64,
    pub seed: u64,
}

impl MemoryGenConfig {
    pub fn new(distance_threshold: f64, seed: u64) -> Self {
        Self {
            max_global_steps: DEFAULT_GLOBAL_STEPS,
            max_local_steps: DEFAULT_LOCAL_STEPS,
            distance_threshold,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_global_steps == 0 {
            return Err(Error::InvalidConfig("max_global_steps must be >= 1".into()));
        }
        if !(self.distance_threshold > 0.0 && self.distance_threshold.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "distance threshold must be positive, got {}",
                self.distance_threshold
            )));
        }
        Ok(())
    }
}

/// One seed's selected memories, sorted ascending by dataset index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySet {
    pub indices: Vec<usize>,
    pub cost: f64,
    pub seed: u64,
}

impl MemorySet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Header `seed=<s> t=<t> cost=<c>`, then `index,sample_id` per memory.
    pub fn to_text(&self, ds: &Dataset, threshold: f64) -> String {
        let mut out = format!("seed={} t={} cost={}\n", self.seed, threshold, self.cost);
        for &i in &self.indices {
            writeln!(out, "{i},{}", ds.id(i)).unwrap();
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>, ds: &Dataset, threshold: f64) -> Result<()> {
        fs::write(path, self.to_text(ds, threshold))?;
        Ok(())
    }

    /// Reads a memory-set file and validates it against `ds` and `matrix`:
    /// ids must match indices and the stored cost must match a recomputation.
    /// Returns the set and the threshold recorded in the header.
    pub fn load(path: impl AsRef<Path>, ds: &Dataset, matrix: &DistanceMatrix) -> Result<(Self, f64)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut lines = content_lines(&text);
        let (hl, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let mut seed = None;
        let mut t = None;
        let mut cost = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                Some(("t", v)) => t = v.parse::<f64>().ok(),
                Some(("cost", v)) => cost = v.parse::<f64>().ok(),
                _ => return Err(Error::parse(path, hl, format!("unexpected header field `{field}`"))),
            }
        }
        let (Some(seed), Some(t), Some(cost)) = (seed, t, cost) else {
            return Err(Error::parse(path, hl, "header must be `seed=<s> t=<t> cost=<c>`"));
        };
        let mut indices = Vec::new();
        for (ln, line) in lines {
            let (i, id) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(path, ln, "expected `index,sample_id`"))?;
            let i: usize = i
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, ln, "bad memory index"))?;
            if i >= ds.len() || ds.id(i) != id.trim() {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("memory {i} `{}` does not match the dataset", id.trim()),
                ));
            }
            indices.push(i);
        }
        check_memories(matrix.len(), &indices)?;
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::parse(path, 0, "memory indices must be strictly ascending"));
        }
        let recomputed = compute_cost(matrix, &indices)?;
        if (recomputed - cost).abs() > COST_TOL * recomputed.max(1.0) {
            return Err(Error::parse(
                path,
                hl,
                format!("stored cost {cost} disagrees with recomputed {recomputed}"),
            ));
        }
        Ok((Self { indices, cost, seed }, t))
    }
}

fn check_memories(n: usize, memories: &[usize]) -> Result<()> {
    if memories.is_empty() {
        return Err(Error::Empty("memory list"));
    }
    if let Some(&bad) = memories.iter().find(|&&m| m >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    Ok(())
}

/// Nearest memory of sample `i` as `(position in memories, distance)`.
/// A sample that is itself a memory maps to itself; other ties go to the
/// lowest position, i.e. the lowest dataset index for sorted memories.
pub fn nearest_memory(matrix: &DistanceMatrix, memories: &[usize], i: usize) -> (usize, f64) {
    if let Some(pos) = memories.iter().position(|&m| m == i) {
        return (pos, 0.0);
    }
    let mut best = (0, matrix.get(i, memories[0]));
    for (pos, &m) in memories.iter().enumerate().skip(1) {
        let d = matrix.get(i, m);
        if d < best.1 {
            best = (pos, d);
        }
    }
    best
}

/// Partitioning cost: sum over samples of the distance to the nearest memory.
pub fn compute_cost(matrix: &DistanceMatrix, memories: &[usize]) -> Result<f64> {
    check_memories(matrix.len(), memories)?;
    Ok((0..matrix.len())
        .map(|i| nearest_memory(matrix, memories, i).1)
        .sum())
}

/// Greedy randomized cover: visit samples in a shuffled order and promote a
/// sample to memory when it is farther than `t` from all memories so far.
/// Returned indices are sorted ascending.
pub fn generate_initial_memories<R: Rng + ?Sized>(
    matrix: &DistanceMatrix,
    t: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..matrix.len()).collect();
    order.shuffle(rng);
    let mut memories: Vec<usize> = Vec::new();
    for i in order {
        if memories.iter().all(|&m| matrix.get(i, m) > t) {
            memories.push(i);
        }
    }
    memories.sort_unstable();
    debug_assert!((0..matrix.len()).all(|i| memories.is_empty()
        || nearest_memory(matrix, &memories, i).1 <= t));
    memories
}

/// The random stream of restart `g` under base seed `s`.
pub fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// What happened inside one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartTrace {
    pub initial: Vec<usize>,
    pub initial_cost: f64,
    /// CurrentCost after each accepted swap, in order.
    pub accepted_costs: Vec<f64>,
    /// Local steps that had no candidate to swap in.
    pub empty_proposals: usize,
    pub final_memories: Vec<usize>,
    pub final_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub restarts: Vec<RestartTrace>,
    /// Index of the restart whose result was returned.
    pub best_restart: usize,
}

/// Runs the restart/local-search procedure and returns the best memory set.
pub fn generate_memories(matrix: &DistanceMatrix, config: &MemoryGenConfig) -> Result<MemorySet> {
    generate_memories_traced(matrix, config).map(|(set, _)| set)
}

/// As [`generate_memories`], also returning a per-restart trace.
pub fn generate_memories_traced(
    matrix: &DistanceMatrix,
    config: &MemoryGenConfig,
) -> Result<(MemorySet, SearchTrace)> {
    config.validate()?;
    if matrix.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let restarts: Vec<RestartTrace> = (0..config.max_global_steps)
        .into_par_iter()
        .map(|g| run_restart(matrix, config, g))
        .collect();

    // strict `<` keeps the lowest restart index on ties
    let mut best_restart = 0;
    for (g, r) in restarts.iter().enumerate().skip(1) {
        if r.final_cost < restarts[best_restart].final_cost {
            best_restart = g;
        }
    }
    let best = &restarts[best_restart];
    let set = MemorySet {
        indices: best.final_memories.clone(),
        cost: best.final_cost,
        seed: config.seed,
    };
    Ok((
        set,
        SearchTrace {
            restarts,
            best_restart,
        },
    ))
}

fn run_restart(matrix: &DistanceMatrix, config: &MemoryGenConfig, g: usize) -> RestartTrace {
    let n = matrix.len();
    let mut rng = restart_rng(config.seed, g);
    let initial = generate_initial_memories(matrix, config.distance_threshold, &mut rng);
    let mut memories = initial.clone();
    let mut assignment = assign(matrix, &memories);
    let mut current = cost_of(matrix, &memories);
    let initial_cost = current;
    let mut accepted_costs = Vec::new();
    let mut empty_proposals = 0;

    for _ in 0..config.max_local_steps {
        let mut is_memory = vec![false; n];
        for &m in &memories {
            is_memory[m] = true;
        }
        // memories whose group has at least one non-memory member
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); memories.len()];
        for (i, &pos) in assignment.iter().enumerate() {
            if !is_memory[i] {
                groups[pos].push(i);
            }
        }
        let swappable: Vec<usize> = (0..memories.len()).filter(|&p| !groups[p].is_empty()).collect();
        let Some(&pos) = swappable.choose(&mut rng) else {
            empty_proposals += 1;
            continue;
        };
        let &candidate = groups[pos].choose(&mut rng).expect("non-empty group");

        let mut proposal = memories.clone();
        proposal[pos] = candidate;
        proposal.sort_unstable();
        let new_cost = cost_of(matrix, &proposal);
        if new_cost < current {
            memories = proposal;
            current = new_cost;
            assignment = assign(matrix, &memories);
            accepted_costs.push(current);
        }
    }

    RestartTrace {
        initial,
        initial_cost,
        accepted_costs,
        empty_proposals,
        final_memories: memories,
        final_cost: current,
    }
}

fn assign(matrix: &DistanceMatrix, memories: &[usize]) -> Vec<usize> {
    (0..matrix.len())
        .map(|i| nearest_memory(matrix, memories, i).0)
        .collect()
}

fn cost_of(matrix: &DistanceMatrix, memories: &[usize]) -> f64 {
    (0..matrix.len())
        .map(|i| nearest_memory(matrix, memories, i).1)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> DistanceMatrix {
        DistanceMatrix::from_fn(points.len(), |i, j| (points[i] - points[j]).abs()).unwrap()
    }

    /// Independent cost: every (sample, memory) pair, no shared helpers.
    fn brute_cost(m: &DistanceMatrix, memories: &[usize]) -> f64 {
        let mut total = 0.0;
        for i in 0..m.len() {
            let mut best = f64::INFINITY;
            for &q in memories {
                let d = if i == q { 0.0 } else { m.get(i, q) };
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        total
    }

    #[test]
    fn cost_examples() {
        let m = line(&[0.0, 1.0, 10.0]);
        assert_eq!(compute_cost(&m, &[0, 2]).unwrap(), 1.0);
        assert_eq!(compute_cost(&m, &[0, 1, 2]).unwrap(), 0.0);
        assert!(matches!(compute_cost(&m, &[]), Err(Error::Empty(_))));
        assert!(compute_cost(&m, &[3]).is_err());
    }

    #[test]
    fn cost_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(2..15);
            let pts: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
            let m = line(&pts);
            let k = rng.random_range(1..=n);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx.truncate(k);
            let a = compute_cost(&m, &idx).unwrap();
            assert!((a - brute_cost(&m, &idx)).abs() < 1e-9);
        }
    }

    #[test]
    fn initial_memories_extremes() {
        let m = line(&[0.0, 1.0, 3.0, 7.0, 8.5]);
        let mut rng = restart_rng(9, 0);
        assert_eq!(generate_initial_memories(&m, 100.0, &mut rng).len(), 1);
        assert_eq!(generate_initial_memories(&m, 0.5, &mut rng).len(), 5);
    }

    #[test]
    fn initial_memories_one_per_separated_cluster() {
        // clusters of diameter 1, gaps of 20: t = 1 admits exactly one memory each
        let m = line(&[0.0, 0.5, 1.0, 21.0, 21.4, 22.0, 42.0, 42.9, 43.0]);
        for seed in 0..20 {
            let mut rng = restart_rng(seed, 0);
            let mem = generate_initial_memories(&m, 1.0, &mut rng);
            assert_eq!(mem.len(), 3, "seed {seed}: {mem:?}");
            let clusters: Vec<usize> = mem.iter().map(|i| i / 3).collect();
            assert_eq!(clusters, vec![0, 1, 2]);
        }
    }

    #[test]
    fn single_sample_dataset() {
        let m = line(&[4.2]);
        let set = generate_memories(&m, &MemoryGenConfig::new(1.0, 0)).unwrap();
        assert_eq!(set.indices, vec![0]);
        assert_eq!(set.cost, 0.0);
    }

    #[test]
    fn two_pairs_reach_optimum() {
        let m = line(&[0.0, 0.1, 10.0, 10.1]);
        // exhaustive optimum over 2-subsets
        let mut opt = f64::INFINITY;
        for a in 0..4 {
            for b in a + 1..4 {
                opt = opt.min(brute_cost(&m, &[a, b]));
            }
        }
        assert!((opt - 0.2).abs() < 1e-12);
        let cfg = MemoryGenConfig::new(1.0, 17);
        let set = generate_memories(&m, &cfg).unwrap();
        assert_eq!(set.len(), 2);
        assert!((set.cost - opt).abs() < 1e-12);
        assert_eq!(generate_memories(&m, &cfg).unwrap(), set);
    }

    #[test]
    fn trace_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..100.0)).collect();
        let m = line(&pts);
        let cfg = MemoryGenConfig::new(8.0, 4);
        let (set, trace) = generate_memories_traced(&m, &cfg).unwrap();
        assert_eq!(trace.restarts.len(), 5);
        for r in &trace.restarts {
            let mut prev = r.initial_cost;
            for &c in &r.accepted_costs {
                assert!(c < prev);
                prev = c;
            }
            assert_eq!(r.final_cost, prev);
            assert!(set.cost <= r.initial_cost);
            assert!(set.cost <= r.final_cost);
            assert_eq!(r.initial.len(), r.final_memories.len());
        }
        assert!((compute_cost(&m, &set.indices).unwrap() - set.cost).abs() < COST_TOL);
        let min = trace
            .restarts
            .iter()
            .map(|r| r.final_cost)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(set.cost, min);
    }

    #[test]
    fn restarts_differ_by_stream() {
        let mut a = restart_rng(3, 0);
        let mut b = restart_rng(3, 1);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn config_validation() {
        let m = line(&[0.0, 1.0]);
        let mut cfg = MemoryGenConfig::new(1.0, 0);
        cfg.max_global_steps = 0;
        assert!(generate_memories(&m, &cfg).is_err());
        let cfg = MemoryGenConfig::new(0.0, 0);
        assert!(generate_memories(&m, &cfg).is_err());
        let mut cfg = MemoryGenConfig::new(1.0, 0);
        cfg.max_local_steps = 0;
        assert!(generate_memories(&m, &cfg).is_ok());
    }

    #[test]
    fn memory_file_round_trip() {
        use crate::dataset::{Modality, Sample};
        let pts = [0.0, 0.1, 10.0, 10.1];
        let ds = Dataset::new(
            Modality::FeatureVector,
            pts.iter()
                .enumerate()
                .map(|(i, v)| Sample { id: format!("x{i}"), values: vec![*v] })
                .collect(),
        )
        .unwrap();
        let m = line(&pts);
        let set = generate_memories(&m, &MemoryGenConfig::new(1.0, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mem.txt");
        set.write(&p, &ds, 1.0).unwrap();
        let (back, t) = MemorySet::load(&p, &ds, &m).unwrap();
        assert_eq!(back, set);
        assert_eq!(t, 1.0);

        fs::write(&p, "seed=2 t=1 cost=5\n0,x0\n2,x2\n").unwrap();
        assert!(MemorySet::load(&p, &ds, &m).unwrap_err().to_string().contains("disagrees"));
        fs::write(&p, "seed=2 t=1 cost=0.2\n0,x1\n2,x2\n").unwrap();
        assert!(MemorySet::load(&p, &ds, &m).is_err());
    }
}
