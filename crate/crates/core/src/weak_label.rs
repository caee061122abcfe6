//! Nearest-memory partitions, induced weak-label columns, budget planning
//! and the per-seed labeling pipeline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{content_lines, Dataset};
use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::labeling::{Answer, LabelProvider, LabelQuery};
use crate::memory::{generate_memories, nearest_memory, MemoryGenConfig, MemorySet};

/// Assignment of every sample to its nearest memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    memories: Vec<usize>,
    /// sample index -> memory dataset index
    assignment: Vec<usize>,
}

impl Partition {
    pub fn memories(&self) -> &[usize] {
        &self.memories
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn memory_of(&self, sample: usize) -> usize {
        self.assignment[sample]
    }

    /// Groups keyed by memory index, members ascending.
    pub fn groups(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut groups: BTreeMap<usize, Vec<usize>> =
            self.memories.iter().map(|&m| (m, Vec::new())).collect();
        for (i, &m) in self.assignment.iter().enumerate() {
            groups.get_mut(&m).expect("assigned to a memory").push(i);
        }
        groups
    }

    /// `sample_id,memory_index,memory_id` per sample.
    pub fn to_text(&self, ds: &Dataset) -> String {
        let mut out = String::from("sample_id,memory_index,memory_id\n");
        for (i, &m) in self.assignment.iter().enumerate() {
            writeln!(out, "{},{m},{}", ds.id(i), ds.id(m)).unwrap();
        }
        out
    }
}

pub fn partition(matrix: &DistanceMatrix, memories: &MemorySet) -> Result<Partition> {
    partition_indices(matrix, &memories.indices)
}

/// Partitions around an arbitrary memory list (sorted internally).
pub fn partition_indices(matrix: &DistanceMatrix, memories: &[usize]) -> Result<Partition> {
    if memories.is_empty() {
        return Err(Error::Empty("memory list"));
    }
    let mut sorted = memories.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&m| m >= matrix.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: matrix.len(),
        });
    }
    let assignment = (0..matrix.len())
        .map(|i| sorted[nearest_memory(matrix, &sorted, i).0])
        .collect();
    Ok(Partition {
        memories: sorted,
        assignment,
    })
}

/// Gives every sample its group's memory label.
pub fn induce_weak_labels(
    partition: &Partition,
    memory_labels: &BTreeMap<usize, usize>,
    ds: &Dataset,
) -> Result<Vec<usize>> {
    for m in &partition.memories {
        if !memory_labels.contains_key(m) {
            return Err(Error::MissingMemoryLabel(ds.id(*m).to_string()));
        }
    }
    Ok(partition
        .assignment
        .iter()
        .map(|m| memory_labels[m])
        .collect())
}

/// Where a weak-label column came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSource {
    Seed(u64),
    External(String),
}

impl ColumnSource {
    pub fn header(&self) -> String {
        match self {
            ColumnSource::Seed(s) => format!("seed_{s}"),
            ColumnSource::External(name) => name.clone(),
        }
    }

    fn from_header(h: &str) -> Self {
        match h.strip_prefix("seed_").and_then(|s| s.parse().ok()) {
            Some(s) => ColumnSource::Seed(s),
            None => ColumnSource::External(h.to_string()),
        }
    }
}

/// `N_u × N_w` votes, row-major; `None` is ABSTAIN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakLabelMatrix {
    sample_ids: Vec<String>,
    sources: Vec<ColumnSource>,
    votes: Vec<Option<usize>>,
}

/// Textual form of ABSTAIN in matrix files.
pub const ABSTAIN_TEXT: &str = "-1";

impl WeakLabelMatrix {
    pub fn new(sample_ids: Vec<String>) -> Self {
        Self {
            sample_ids,
            sources: Vec::new(),
            votes: Vec::new(),
        }
    }

    /// Builds a matrix of external columns from row-major votes.
    pub fn from_rows(
        sample_ids: Vec<String>,
        column_names: Vec<String>,
        rows: Vec<Vec<Option<usize>>>,
    ) -> Result<Self> {
        if rows.len() != sample_ids.len() {
            return Err(Error::Dimension(format!(
                "{} rows for {} samples",
                rows.len(),
                sample_ids.len()
            )));
        }
        let w = column_names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != w) {
            return Err(Error::Dimension(format!("row of {} votes, expected {w}", r.len())));
        }
        Ok(Self {
            sample_ids,
            sources: column_names.iter().map(|h| ColumnSource::from_header(h)).collect(),
            votes: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_functions(&self) -> usize {
        self.sources.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn sources(&self) -> &[ColumnSource] {
        &self.sources
    }

    pub fn row(&self, i: usize) -> &[Option<usize>] {
        let w = self.n_functions();
        &self.votes[i * w..(i + 1) * w]
    }

    pub fn column(&self, k: usize) -> Vec<Option<usize>> {
        (0..self.n_samples()).map(|i| self.row(i)[k]).collect()
    }

    pub fn max_vote(&self) -> Option<usize> {
        self.votes.iter().flatten().copied().max()
    }

    /// Appends a seed column; induced columns never abstain.
    pub fn push_seed_column(&mut self, seed: u64, column: &[usize]) -> Result<()> {
        self.push_column(ColumnSource::Seed(seed), column.iter().map(|&v| Some(v)).collect())
    }

    fn push_column(&mut self, source: ColumnSource, column: Vec<Option<usize>>) -> Result<()> {
        let n = self.n_samples();
        if column.len() != n {
            return Err(Error::Dimension(format!("column of {} for {n} samples", column.len())));
        }
        let w = self.n_functions();
        let mut votes = Vec::with_capacity(n * (w + 1));
        for (i, v) in column.into_iter().enumerate() {
            votes.extend_from_slice(&self.votes[i * w..(i + 1) * w]);
            votes.push(v);
        }
        self.votes = votes;
        self.sources.push(source);
        Ok(())
    }

    /// Samples reordered by `perm` (new row i = old row perm[i]).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            sample_ids: perm.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            sources: self.sources.clone(),
            votes: perm.iter().flat_map(|&i| self.row(i).to_vec()).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("sample_id");
        for s in &self.sources {
            out.push(',');
            out.push_str(&s.header());
        }
        out.push('\n');
        for (i, id) in self.sample_ids.iter().enumerate() {
            out.push_str(id);
            for v in self.row(i) {
                match v {
                    Some(c) => write!(out, ",{c}").unwrap(),
                    None => write!(out, ",{ABSTAIN_TEXT}").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Reads the matrix format; `-1` cells become ABSTAIN.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut lines = content_lines(&text);
        let (hl, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing header row"))?;
        let mut cols = header.split(',').map(str::trim);
        if cols.next() != Some("sample_id") {
            return Err(Error::parse(path, hl, "header must start with `sample_id`"));
        }
        let names: Vec<String> = cols.map(String::from).collect();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (ln, line) in lines {
            let mut cells = line.split(',').map(str::trim);
            let id = cells.next().unwrap_or_default().to_string();
            let row = cells
                .map(|c| match c {
                    ABSTAIN_TEXT => Ok(None),
                    _ => c.parse::<usize>().map(Some).map_err(|_| {
                        Error::parse(path, ln, format!("bad vote `{c}`"))
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != names.len() {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("{} votes but {} columns", row.len(), names.len()),
                ));
            }
            ids.push(id);
            rows.push(row);
        }
        Self::from_rows(ids, names, rows)
    }
}

/// Expert labeling budget: limit `N_L` and labels consumed `N_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub limit: usize,
    pub consumed: usize,
}

impl Budget {
    pub fn new(limit: usize) -> Self {
        Self { limit, consumed: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.limit - self.consumed
    }

    /// Upper bound on weak-label columns, `⌊N_L / |Y|⌋`.
    pub fn max_functions(&self, n_classes: usize) -> usize {
        self.limit / n_classes
    }
}

/// Outcome of [`plan_seeds`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedPlan {
    /// Number of leading candidate seeds accepted (`N_w`).
    pub accepted: usize,
    /// Labels those seeds will consume (`N_s`).
    pub consumed: usize,
}

/// Accepts candidate seeds in order while each has at least `|Y|` memories
/// and the running total stays within the budget.
pub fn plan_seeds(budget: &Budget, n_classes: usize, per_seed_sizes: &[usize]) -> Result<SeedPlan> {
    let mut consumed = 0;
    let mut accepted = 0;
    for &size in per_seed_sizes {
        if size < n_classes || consumed + size > budget.remaining() {
            break;
        }
        consumed += size;
        accepted += 1;
    }
    if accepted == 0 {
        let why = match per_seed_sizes.first() {
            _ if budget.limit < n_classes => format!(
                "budget {} is below the class count {n_classes}",
                budget.limit
            ),
            None => "no candidate seeds".to_string(),
            Some(&s) if s < n_classes => format!(
                "first seed yields {s} memories, fewer than {n_classes} classes"
            ),
            Some(&s) => format!("first seed needs {s} labels but the budget allows {}", budget.remaining()),
        };
        return Err(Error::BudgetInfeasible(why));
    }
    debug_assert!(accepted <= budget.max_functions(n_classes));
    Ok(SeedPlan { accepted, consumed })
}

/// Memory generation for every candidate seed, in seed order.
pub fn candidate_memories(
    matrix: &DistanceMatrix,
    base: &MemoryGenConfig,
    seeds: &[u64],
) -> Result<Vec<MemorySet>> {
    check_distinct(seeds)?;
    seeds
        .par_iter()
        .map(|&s| generate_memories(matrix, &base.with_seed(s)))
        .collect()
}

fn check_distinct(seeds: &[u64]) -> Result<()> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig(format!("seed {} listed twice", w[0])));
    }
    Ok(())
}

/// Everything one pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Memory sets of seeds that contributed a column.
    pub memory_sets: Vec<MemorySet>,
    pub partitions: Vec<Partition>,
    /// Expert labels per contributing seed, keyed by memory index.
    pub memory_labels: Vec<BTreeMap<usize, usize>>,
    pub matrix: WeakLabelMatrix,
    pub budget: Budget,
    /// Accepted seeds dropped because the expert skipped a memory.
    pub skipped_seeds: Vec<u64>,
}

/// The labeling queries for one seed's memories.
pub fn queries_for(ds: &Dataset, set: &MemorySet) -> Vec<LabelQuery> {
    set.indices
        .iter()
        .map(|&i| LabelQuery::new(set.seed, i, ds.id(i)))
        .collect()
}

/// Plans seeds against the budget, asks the provider for every accepted
/// seed's memory labels (one batch per seed, in order) and assembles the
/// weak-label matrix.
pub fn label_and_induce(
    ds: &Dataset,
    matrix: &DistanceMatrix,
    candidates: &[MemorySet],
    budget: Budget,
    n_classes: usize,
    provider: &mut dyn LabelProvider,
) -> Result<PipelineOutput> {
    let sizes: Vec<usize> = candidates.iter().map(MemorySet::len).collect();
    let plan = plan_seeds(&budget, n_classes, &sizes)?;
    let accepted = &candidates[..plan.accepted];

    let batches: Vec<Vec<LabelQuery>> = accepted.iter().map(|s| queries_for(ds, s)).collect();
    provider.prepare(&batches)?;

    let mut budget = budget;
    let mut out = PipelineOutput {
        memory_sets: Vec::new(),
        partitions: Vec::new(),
        memory_labels: Vec::new(),
        matrix: WeakLabelMatrix::new(ds.samples().iter().map(|s| s.id.clone()).collect()),
        budget,
        skipped_seeds: Vec::new(),
    };
    for (set, queries) in accepted.iter().zip(&batches) {
        let answers = provider.label_batch(ds, set.seed, queries)?;
        if answers.len() != queries.len() {
            return Err(Error::ProviderRefused(format!(
                "{} answers for {} queries",
                answers.len(),
                queries.len()
            )));
        }
        let mut labels = BTreeMap::new();
        for (q, a) in queries.iter().zip(&answers) {
            if let Answer::Label(c) = *a {
                if c >= n_classes {
                    return Err(Error::ProviderRefused(format!(
                        "class {c} for `{}` is out of range",
                        q.sample_id
                    )));
                }
                labels.insert(q.sample_index, c);
            }
        }
        budget.consumed += labels.len();
        if labels.len() < queries.len() {
            out.skipped_seeds.push(set.seed);
            continue;
        }
        let p = partition(matrix, set)?;
        let column = induce_weak_labels(&p, &labels, ds)?;
        out.matrix.push_seed_column(set.seed, &column)?;
        out.memory_sets.push(set.clone());
        out.partitions.push(p);
        out.memory_labels.push(labels);
    }
    assert!(budget.consumed <= budget.limit, "budget overrun");
    out.budget = budget;
    Ok(out)
}

/// Memory generation, budget planning, expert labeling and induction.
pub fn run_pipeline(
    ds: &Dataset,
    matrix: &DistanceMatrix,
    base: &MemoryGenConfig,
    seeds: &[u64],
    budget: Budget,
    n_classes: usize,
    provider: &mut dyn LabelProvider,
) -> Result<PipelineOutput> {
    let candidates = candidate_memories(matrix, base, seeds)?;
    label_and_induce(ds, matrix, &candidates, budget, n_classes, provider)
}
