//! Config-driven commands. The `memlabel` binary is a thin argument parser
//! over these functions.
//!
//! A run is described by one TOML file:
//!
//! ```toml
//! output = "out"
//!
//! [dataset]
//! path = "series.csv"
//! modality = "time-series"
//! label_space = "classes.txt"
//! ground_truth = "truth.csv"        # optional, enables scoring
//!
//! [distance]
//! kind = "dtw"                      # dtw | euclidean | symmetric-kl
//!
//! [memory]
//! threshold = 4.0
//! seeds = [1, 2, 3]
//! max_global_steps = 5
//! max_local_steps = 30
//!
//! [budget]
//! max_labels = 60
//!
//! [provider]
//! mode = "oracle"                   # oracle | interactive | serve
//! answers = "truth.csv"
//!
//! [aggregate]
//! method = "both"                   # majority | label-model | both
//! ```
//!
//! Relative paths resolve against the config file's directory. Output file
//! names are fixed (see [`artifacts`]).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic, Dataset, GroundTruth, LabelSpace, Modality, SyntheticSpec};
use crate::distance::{build_distance_matrix, DistanceFunction, DistanceKind, DistanceMatrix, DEFAULT_KL_EPS};
use crate::error::{Error, Result};
use crate::eval::{ablation_csv, ablation_sweep, ablation_table, score, EvalParams, ReportMeta};
use crate::label_model::{fit_label_model, majority_vote, predict, Aggregator, EmOptions, ProbabilisticLabels};
use crate::labeling::{InteractiveProvider, LabelProvider, LabelSession, OracleProvider};
use crate::memory::{MemoryGenConfig, MemorySet, DEFAULT_GLOBAL_STEPS, DEFAULT_LOCAL_STEPS};
use crate::service::{serve_session, ServiceProvider, SharedSession};
use crate::weak_label::{candidate_memories, label_and_induce, Budget, PipelineOutput, WeakLabelMatrix};

/// Output file names inside the output directory.
pub mod artifacts {
    pub const MANIFEST: &str = "manifest.json";
    pub const WEAK_LABELS: &str = "weak_labels.csv";
    pub const LABEL_MODEL_PARAMS: &str = "label_model_params.txt";
    pub const ABLATION_CSV: &str = "ablation.csv";
    pub const ABLATION_TABLE: &str = "ablation.txt";
    pub const JOURNAL: &str = "session.journal";

    pub fn memories(seed: u64) -> String {
        format!("memories_seed_{seed}.txt")
    }

    pub fn partition(seed: u64) -> String {
        format!("partition_seed_{seed}.csv")
    }

    pub fn labels(agg: &str) -> String {
        format!("labels_{}.csv", agg.replace('-', "_"))
    }

    pub fn report_table(agg: &str) -> String {
        format!("report_{}.txt", agg.replace('-', "_"))
    }

    pub fn report_csv(agg: &str) -> String {
        format!("report_{}.csv", agg.replace('-', "_"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    pub modality: Modality,
    pub label_space: PathBuf,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSection {
    pub kind: DistanceKind,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    DEFAULT_KL_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySection {
    pub threshold: f64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_global")]
    pub max_global_steps: usize,
    #[serde(default = "default_local")]
    pub max_local_steps: usize,
}

fn default_global() -> usize {
    DEFAULT_GLOBAL_STEPS
}

fn default_local() -> usize {
    DEFAULT_LOCAL_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub max_labels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderMode {
    Oracle,
    Interactive,
    Serve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub mode: ProviderMode,
    /// Oracle answers (`id,class_index`); defaults to the ground truth.
    #[serde(default)]
    pub answers: Option<PathBuf>,
    /// Oracle answer noise: probability of flipping each sample's class.
    #[serde(default)]
    pub flip_rate: f64,
    #[serde(default)]
    pub flip_seed: u64,
    #[serde(default)]
    pub bind: Option<String>,
    /// Session journal; defaults to `<output>/session.journal`.
    #[serde(default)]
    pub journal: Option<PathBuf>,
    #[serde(default)]
    pub preview_dir: Option<PathBuf>,
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateMethod {
    Majority,
    LabelModel,
    Both,
}

impl AggregateMethod {
    pub fn aggregators(self) -> Vec<Aggregator> {
        match self {
            AggregateMethod::Majority => vec![Aggregator::Majority],
            AggregateMethod::LabelModel => vec![Aggregator::LabelModel],
            AggregateMethod::Both => vec![Aggregator::Majority, Aggregator::LabelModel],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateSection {
    #[serde(default = "default_method")]
    pub method: AggregateMethod,
    #[serde(default)]
    pub fixed_prior: Option<Vec<f64>>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    /// Positive class for binary F1.
    #[serde(default)]
    pub positive_class: Option<usize>,
}

fn default_method() -> AggregateMethod {
    AggregateMethod::Both
}
fn default_tol() -> f64 {
    EmOptions::default().tol
}
fn default_iters() -> usize {
    EmOptions::default().max_iters
}
fn default_smoothing() -> f64 {
    EmOptions::default().smoothing
}

impl Default for AggregateSection {
    fn default() -> Self {
        Self {
            method: default_method(),
            fixed_prior: None,
            tol: default_tol(),
            max_iters: default_iters(),
            smoothing: default_smoothing(),
            positive_class: None,
        }
    }
}

impl AggregateSection {
    pub fn em_options(&self) -> EmOptions {
        EmOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            smoothing: self.smoothing,
            fixed_prior: self.fixed_prior.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub thresholds: Vec<f64>,
}

/// A complete, reproducible run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub dataset: DatasetSection,
    pub distance: DistanceSection,
    pub memory: MemorySection,
    pub budget: BudgetSection,
    pub provider: ProviderSection,
    #[serde(default)]
    pub aggregate: AggregateSection,
    #[serde(default)]
    pub ablate: Option<AblateSection>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Parses and validates a config file, resolving relative paths against
    /// its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        fix(&mut self.dataset.path);
        fix(&mut self.dataset.label_space);
        if let Some(p) = &mut self.dataset.ground_truth {
            fix(p);
        }
        for p in [
            &mut self.provider.answers,
            &mut self.provider.journal,
            &mut self.provider.preview_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Cross-field checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        self.distance_function().check_modality(self.dataset.modality)?;
        self.memory_config(0).validate()?;
        if self.memory.seeds.is_empty() {
            return Err(Error::InvalidConfig("memory.seeds is empty".into()));
        }
        let mut seeds = self.memory.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("memory.seeds must be distinct".into()));
        }
        if !(0.0..=1.0).contains(&self.provider.flip_rate) {
            return Err(Error::InvalidConfig("provider.flip_rate must be in [0, 1]".into()));
        }
        if self.provider.mode == ProviderMode::Oracle
            && self.provider.answers.is_none()
            && self.dataset.ground_truth.is_none()
        {
            return Err(Error::InvalidConfig(
                "oracle mode needs provider.answers or dataset.ground_truth".into(),
            ));
        }
        if let Some(t) = self.ablate.as_ref().and_then(|a| a.thresholds.iter().find(|t| !(**t > 0.0))) {
            return Err(Error::InvalidConfig(format!("ablate threshold {t} is not positive")));
        }
        Ok(())
    }

    pub fn distance_function(&self) -> DistanceFunction {
        DistanceFunction {
            kind: self.distance.kind,
            eps: self.distance.eps,
        }
    }

    pub fn memory_config(&self, seed: u64) -> MemoryGenConfig {
        MemoryGenConfig {
            max_global_steps: self.memory.max_global_steps,
            max_local_steps: self.memory.max_local_steps,
            distance_threshold: self.memory.threshold,
            seed,
        }
    }
}

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.memory.seeds = s.clone();
        }
        cfg.validate()
    }
}

/// Loaded inputs of a run.
pub struct Inputs {
    pub dataset: Dataset,
    pub label_space: LabelSpace,
    pub ground_truth: Option<GroundTruth>,
    pub matrix: DistanceMatrix,
}

fn stage<T>(name: &'static str, r: Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| anyhow::anyhow!("[{name}] {e}"))
}

pub fn load_inputs(cfg: &RunConfig) -> anyhow::Result<Inputs> {
    let dataset = stage("load", Dataset::load(&cfg.dataset.path, cfg.dataset.modality))?;
    let label_space = stage("load", LabelSpace::load(&cfg.dataset.label_space))?;
    let ground_truth = match &cfg.dataset.ground_truth {
        Some(p) => {
            let gt = stage("load", GroundTruth::load(p))?;
            stage("load", gt.validate(&dataset, label_space.len()))?;
            Some(gt)
        }
        None => None,
    };
    let matrix = stage("distance", build_distance_matrix(&dataset, &cfg.distance_function()))?;
    Ok(Inputs {
        dataset,
        label_space,
        ground_truth,
        matrix,
    })
}

/// Provider selected by the config; keeps the HTTP service alive while held.
pub struct ProviderHandle {
    provider: Box<dyn LabelProvider>,
    _service: Option<crate::service::ServiceHandle>,
}

fn open_session(cfg: &RunConfig, inputs: &Inputs) -> Result<LabelSession> {
    let journal = cfg
        .provider
        .journal
        .clone()
        .unwrap_or_else(|| cfg.output.join(artifacts::JOURNAL));
    if let Some(dir) = journal.parent() {
        fs::create_dir_all(dir)?;
    }
    let id = cfg
        .provider
        .session_id
        .clone()
        .unwrap_or_else(|| "memlabel".to_string());
    LabelSession::open(journal, id, inputs.label_space.clone(), cfg.budget.max_labels)
}

pub fn make_provider(cfg: &RunConfig, inputs: &Inputs, log: &mut dyn Write) -> anyhow::Result<ProviderHandle> {
    let provider: Box<dyn LabelProvider> = match cfg.provider.mode {
        ProviderMode::Oracle => {
            let answers = match (&cfg.provider.answers, &inputs.ground_truth) {
                (Some(p), _) => stage("provider", GroundTruth::load(p))?,
                (None, Some(gt)) => gt.clone(),
                (None, None) => anyhow::bail!("[provider] no oracle answers configured"),
            };
            let oracle = if cfg.provider.flip_rate > 0.0 {
                OracleProvider::with_label_noise(
                    &answers,
                    inputs.label_space.len(),
                    cfg.provider.flip_rate,
                    cfg.provider.flip_seed,
                )
            } else {
                OracleProvider::new(answers)
            };
            Box::new(oracle)
        }
        ProviderMode::Interactive => {
            let session = stage("provider", open_session(cfg, inputs))?;
            Box::new(InteractiveProvider::new(io::stdin().lock(), io::stderr(), session))
        }
        ProviderMode::Serve => {
            let session = stage("provider", open_session(cfg, inputs))?;
            let shared = SharedSession::new(session);
            let bind = cfg.provider.bind.as_deref().unwrap_or("127.0.0.1:8080");
            let addr: SocketAddr = bind
                .parse()
                .map_err(|e| anyhow::anyhow!("[provider] bad bind address `{bind}`: {e}"))?;
            let handle = stage(
                "serve",
                serve_session(
                    shared.clone(),
                    Arc::new(inputs.dataset.clone()),
                    cfg.provider.preview_dir.clone(),
                    addr,
                ),
            )?;
            writeln!(log, "labeling service listening on {}", handle.base_url())?;
            return Ok(ProviderHandle {
                provider: Box::new(ServiceProvider::new(shared)),
                _service: Some(handle),
            });
        }
    };
    Ok(ProviderHandle {
        provider,
        _service: None,
    })
}

/// Run record written next to the artifacts. Staged commands read and extend
/// it, so `memories`, `partition` and `aggregate` in sequence leave the same
/// manifest as `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub n_samples: usize,
    pub candidate_seed_sizes: BTreeMap<u64, usize>,
    pub accepted_seeds: Vec<u64>,
    pub skipped_seeds: Vec<u64>,
    pub n_l: usize,
    pub n_s: usize,
    pub n_w: usize,
    pub artifacts: Vec<String>,
}

impl Manifest {
    fn new(cfg: &RunConfig, n_samples: usize, candidates: &[MemorySet]) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            n_samples,
            candidate_seed_sizes: candidates.iter().map(|s| (s.seed, s.len())).collect(),
            accepted_seeds: Vec::new(),
            skipped_seeds: Vec::new(),
            n_l: cfg.budget.max_labels,
            n_s: 0,
            n_w: 0,
            artifacts: Vec::new(),
        }
    }

    fn record_labeling(&mut self, out: &PipelineOutput) {
        self.accepted_seeds = out.memory_sets.iter().map(|s| s.seed).collect();
        self.skipped_seeds = out.skipped_seeds.clone();
        self.n_s = out.budget.consumed;
        self.n_w = out.matrix.n_functions();
    }

    fn report_meta(&self) -> ReportMeta {
        ReportMeta {
            threshold: Some(self.config.memory.threshold),
            n_l: Some(self.n_l),
            n_s: Some(self.n_s),
            n_w: Some(self.n_w),
            aggregator: None,
        }
    }

    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(artifacts::MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(|e| anyhow::anyhow!("missing stage file {}: {e}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fails when the earlier stage used different data or memory settings.
    fn check_compatible(&self, cfg: &RunConfig, stage: &str) -> anyhow::Result<()> {
        let a = &self.config;
        if a.dataset != cfg.dataset || a.distance != cfg.distance || a.memory != cfg.memory {
            anyhow::bail!("[{stage}] stage files in {} were made with a different config", cfg.output.display());
        }
        Ok(())
    }

    fn write(&mut self, dir: &Path) -> anyhow::Result<()> {
        self.artifacts.sort();
        self.artifacts.dedup();
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(dir.join(artifacts::MANIFEST), text)?;
        Ok(())
    }
}

fn write_file(dir: &Path, name: &str, contents: &str, written: &mut Vec<String>) -> anyhow::Result<()> {
    fs::write(dir.join(name), contents).map_err(|e| anyhow::anyhow!("[write] {name}: {e}"))?;
    written.push(name.to_string());
    Ok(())
}

fn write_memory_sets(cfg: &RunConfig, ds: &Dataset, sets: &[MemorySet], written: &mut Vec<String>) -> anyhow::Result<()> {
    for s in sets {
        let text = s.to_text(ds, cfg.memory.threshold);
        write_file(&cfg.output, &artifacts::memories(s.seed), &text, written)?;
    }
    Ok(())
}

fn write_labeling(cfg: &RunConfig, ds: &Dataset, out: &PipelineOutput, written: &mut Vec<String>) -> anyhow::Result<()> {
    for (set, p) in out.memory_sets.iter().zip(&out.partitions) {
        write_file(&cfg.output, &artifacts::partition(set.seed), &p.to_text(ds), written)?;
    }
    write_file(&cfg.output, artifacts::WEAK_LABELS, &out.matrix.to_text(), written)
}

/// Aggregates, writes label files and (with ground truth) reports. Returns
/// one summary line per aggregator.
fn write_aggregates(
    section: &AggregateSection,
    output: &Path,
    matrix: &WeakLabelMatrix,
    label_space: &LabelSpace,
    gt: Option<&GroundTruth>,
    meta: &ReportMeta,
    written: &mut Vec<String>,
) -> anyhow::Result<Vec<String>> {
    if matrix.n_functions() == 0 {
        anyhow::bail!("[aggregate] the weak-label matrix has no columns");
    }
    let n_classes = label_space.len();
    let em = section.em_options();
    let mut summary = Vec::new();
    for agg in section.method.aggregators() {
        let labels: ProbabilisticLabels = match agg {
            Aggregator::Majority => stage("aggregate", majority_vote(matrix, n_classes))?,
            Aggregator::LabelModel => {
                let fit = match fit_label_model(matrix, n_classes, &em) {
                    Ok(f) => f,
                    Err(Error::Degenerate(why)) if section.method == AggregateMethod::Both => {
                        summary.push(format!("label-model skipped: {why}"));
                        continue;
                    }
                    Err(e) => return Err(anyhow::anyhow!("[aggregate] {e}")),
                };
                let names: Vec<String> = matrix.sources().iter().map(|s| s.header()).collect();
                write_file(output, artifacts::LABEL_MODEL_PARAMS, &fit.params.to_text(&names), written)?;
                stage("aggregate", predict(&fit.params, matrix))?
            }
        };
        write_file(output, &artifacts::labels(agg.as_str()), &labels.to_text(), written)?;
        let Some(gt) = gt else {
            summary.push(format!("{}: {} labels written", agg.as_str(), labels.len()));
            continue;
        };
        let positive = section.positive_class.or((n_classes == 2).then_some(1));
        let mut report = stage("score", score(&labels, gt, positive))?;
        report.meta = ReportMeta {
            aggregator: Some(agg.as_str().to_string()),
            ..meta.clone()
        };
        let classes = label_space.classes();
        write_file(output, &artifacts::report_table(agg.as_str()), &report.to_table(classes), written)?;
        write_file(output, &artifacts::report_csv(agg.as_str()), &report.to_csv(classes), written)?;
        summary.push(format!(
            "{}: accuracy {:.4}, f1 {:.4}",
            agg.as_str(),
            report.accuracy,
            report.headline_f1()
        ));
    }
    Ok(summary)
}

fn create_output(cfg: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(&cfg.output)
        .map_err(|e| anyhow::anyhow!("[write] cannot create {}: {e}", cfg.output.display()))
}

fn load_label_inputs(cfg: &RunConfig) -> anyhow::Result<(LabelSpace, Option<GroundTruth>)> {
    let label_space = stage("load", LabelSpace::load(&cfg.dataset.label_space))?;
    let gt = match &cfg.dataset.ground_truth {
        Some(p) => Some(stage("load", GroundTruth::load(p))?),
        None => None,
    };
    Ok((label_space, gt))
}

fn collect_labels(cfg: &RunConfig, inputs: &Inputs, candidates: &[MemorySet], log: &mut dyn Write) -> anyhow::Result<PipelineOutput> {
    let mut handle = make_provider(cfg, inputs, log)?;
    let out = stage(
        "label",
        label_and_induce(
            &inputs.dataset,
            &inputs.matrix,
            candidates,
            Budget::new(cfg.budget.max_labels),
            inputs.label_space.len(),
            handle.provider.as_mut(),
        ),
    )?;
    for s in &out.skipped_seeds {
        writeln!(log, "seed {s}: skipped")?;
    }
    Ok(out)
}

/// The whole pipeline: memories, labeling, weak labels, aggregation and
/// (with ground truth) scoring.
pub fn cmd_run(cfg: &RunConfig, log: &mut dyn Write) -> anyhow::Result<()> {
    create_output(cfg)?;
    let inputs = load_inputs(cfg)?;
    let candidates = stage(
        "memories",
        candidate_memories(&inputs.matrix, &cfg.memory_config(0), &cfg.memory.seeds),
    )?;
    let mut manifest = Manifest::new(cfg, inputs.dataset.len(), &candidates);
    write_memory_sets(cfg, &inputs.dataset, &candidates, &mut manifest.artifacts)?;
    let out = collect_labels(cfg, &inputs, &candidates, log)?;
    write_labeling(cfg, &inputs.dataset, &out, &mut manifest.artifacts)?;
    manifest.record_labeling(&out);
    let summary = write_aggregates(
        &cfg.aggregate,
        &cfg.output,
        &out.matrix,
        &inputs.label_space,
        inputs.ground_truth.as_ref(),
        &manifest.report_meta(),
        &mut manifest.artifacts,
    );
    manifest.write(&cfg.output)?;
    let summary = summary?;
    writeln!(
        log,
        "N_w={} N_s={}/{} -> {}",
        manifest.n_w,
        manifest.n_s,
        manifest.n_l,
        cfg.output.display()
    )?;
    for line in summary {
        writeln!(log, "  {line}")?;
    }
    Ok(())
}

/// First stage: one memory-set file per candidate seed.
pub fn cmd_memories(cfg: &RunConfig, log: &mut dyn Write) -> anyhow::Result<()> {
    create_output(cfg)?;
    let inputs = load_inputs(cfg)?;
    let candidates = stage(
        "memories",
        candidate_memories(&inputs.matrix, &cfg.memory_config(0), &cfg.memory.seeds),
    )?;
    let mut manifest = Manifest::new(cfg, inputs.dataset.len(), &candidates);
    write_memory_sets(cfg, &inputs.dataset, &candidates, &mut manifest.artifacts)?;
    manifest.write(&cfg.output)?;
    for s in &candidates {
        writeln!(log, "seed {}: {} memories, cost {}", s.seed, s.len(), s.cost)?;
    }
    Ok(())
}

fn read_memory_sets(cfg: &RunConfig, inputs: &Inputs) -> anyhow::Result<Vec<MemorySet>> {
    cfg.memory
        .seeds
        .iter()
        .map(|&seed| {
            let path = cfg.output.join(artifacts::memories(seed));
            let (set, t) = MemorySet::load(&path, &inputs.dataset, &inputs.matrix)
                .map_err(|e| anyhow::anyhow!("[partition] {e}"))?;
            if set.seed != seed || t != cfg.memory.threshold {
                anyhow::bail!(
                    "[partition] {} was made with seed {} t={}, config says seed {seed} t={}",
                    path.display(),
                    set.seed,
                    t,
                    cfg.memory.threshold
                );
            }
            Ok(set)
        })
        .collect()
}

/// Second stage: reads the memory sets, collects expert labels and writes
/// partitions plus the weak-label matrix.
pub fn cmd_partition(cfg: &RunConfig, log: &mut dyn Write) -> anyhow::Result<()> {
    let mut manifest = Manifest::load(&cfg.output)?;
    manifest.check_compatible(cfg, "partition")?;
    let inputs = load_inputs(cfg)?;
    let candidates = read_memory_sets(cfg, &inputs)?;
    let out = collect_labels(cfg, &inputs, &candidates, log)?;
    write_labeling(cfg, &inputs.dataset, &out, &mut manifest.artifacts)?;
    manifest.config = cfg.clone();
    manifest.record_labeling(&out);
    manifest.write(&cfg.output)?;
    writeln!(log, "N_w={} N_s={}", manifest.n_w, manifest.n_s)?;
    Ok(())
}

/// Last stage: aggregates the weak-label matrix in the output directory and
/// scores it when ground truth is configured.
pub fn cmd_aggregate(cfg: &RunConfig, log: &mut dyn Write) -> anyhow::Result<()> {
    let mut manifest = Manifest::load(&cfg.output)?;
    manifest.check_compatible(cfg, "aggregate")?;
    let (label_space, gt) = load_label_inputs(cfg)?;
    let matrix = stage("aggregate", WeakLabelMatrix::load(cfg.output.join(artifacts::WEAK_LABELS)))?;
    if matrix.n_functions() != manifest.n_w {
        anyhow::bail!("[aggregate] weak_labels.csv has {} columns, manifest says {}", matrix.n_functions(), manifest.n_w);
    }
    manifest.config = cfg.clone();
    let summary = write_aggregates(
        &cfg.aggregate,
        &cfg.output,
        &matrix,
        &label_space,
        gt.as_ref(),
        &manifest.report_meta(),
        &mut manifest.artifacts,
    )?;
    manifest.write(&cfg.output)?;
    for line in summary {
        writeln!(log, "{line}")?;
    }
    Ok(())
}

/// Aggregates any weak-label matrix file, including ones built outside this
/// crate, into `output`.
pub fn cmd_aggregate_matrix(
    section: &AggregateSection,
    matrix_path: &Path,
    label_space: &LabelSpace,
    gt: Option<&GroundTruth>,
    output: &Path,
    log: &mut dyn Write,
) -> anyhow::Result<()> {
    let matrix = stage("aggregate", WeakLabelMatrix::load(matrix_path))?;
    fs::create_dir_all(output)?;
    let meta = ReportMeta {
        n_w: Some(matrix.n_functions()),
        ..ReportMeta::default()
    };
    for line in write_aggregates(section, output, &matrix, label_space, gt, &meta, &mut Vec::new())? {
        writeln!(log, "{line}")?;
    }
    Ok(())
}

/// Scores a probabilistic-label file; returns the rendered table.
pub fn cmd_score(
    predictions: &Path,
    gt: &GroundTruth,
    label_space: &LabelSpace,
    positive: Option<usize>,
    output: Option<&Path>,
) -> anyhow::Result<String> {
    let pred = stage("score", ProbabilisticLabels::load(predictions))?;
    if pred.n_classes() != label_space.len() {
        anyhow::bail!(
            "[score] predictions have {} classes, label space has {}",
            pred.n_classes(),
            label_space.len()
        );
    }
    let positive = positive.or((label_space.len() == 2).then_some(1));
    let report = stage("score", score(&pred, gt, positive))?;
    let table = report.to_table(label_space.classes());
    if let Some(dir) = output {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), &table)?;
        fs::write(dir.join("report.csv"), report.to_csv(label_space.classes()))?;
    }
    Ok(table)
}

/// Threshold sweep with the oracle provider; needs ground truth.
pub fn cmd_ablate(cfg: &RunConfig, log: &mut dyn Write) -> anyhow::Result<()> {
    create_output(cfg)?;
    let inputs = load_inputs(cfg)?;
    let Some(gt) = &inputs.ground_truth else {
        anyhow::bail!("[ablate] dataset.ground_truth is required");
    };
    let thresholds = cfg
        .ablate
        .as_ref()
        .map(|a| a.thresholds.clone())
        .unwrap_or_else(|| vec![cfg.memory.threshold]);
    let params = EvalParams {
        memory: cfg.memory_config(0),
        seeds: cfg.memory.seeds.clone(),
        budget: cfg.budget.max_labels,
        em: cfg.aggregate.em_options(),
    };
    let rows = stage(
        "ablate",
        ablation_sweep(
            &inputs.dataset,
            &inputs.matrix,
            gt,
            inputs.label_space.len(),
            &thresholds,
            &params,
            &cfg.aggregate.method.aggregators(),
        ),
    )?;
    fs::write(cfg.output.join(artifacts::ABLATION_CSV), ablation_csv(&rows))?;
    let table = ablation_table(&rows);
    fs::write(cfg.output.join(artifacts::ABLATION_TABLE), &table)?;
    write!(log, "{table}")?;
    Ok(())
}

/// Writes a synthetic dataset, its label space and ground truth into `dir`.
/// Returns the dataset file name.
pub fn cmd_synth(spec_path: &Path, seed: Option<u64>, dir: &Path) -> anyhow::Result<PathBuf> {
    let spec = stage("synth", SyntheticSpec::load(spec_path))?;
    let seed = seed.or(spec.seed).unwrap_or(0);
    let (ds, gt) = stage("synth", generate_synthetic(&spec, seed))?;
    fs::create_dir_all(dir)?;
    let name = match spec.modality {
        Modality::TimeSeries => "dataset.csv",
        _ => "dataset.tsv",
    };
    let path = dir.join(name);
    ds.write(&path)?;
    stage("synth", spec.label_space())?.write(dir.join("classes.txt"))?;
    gt.write(dir.join("ground_truth.csv"))?;
    Ok(path)
}
