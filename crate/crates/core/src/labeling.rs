//! The expert-label channel.
//!
//! A [`LabelProvider`] answers one batch of memory queries per seed. Three
//! providers exist: [`OracleProvider`] answers from ground truth,
//! [`InteractiveProvider`] prompts on a terminal, and the HTTP service in
//! [`crate::service`] lets a browser answer. The latter two record every
//! accepted label in a [`LabelSession`] backed by an append-only journal, so
//! an interrupted session resumes where it stopped.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, GroundTruth, LabelSpace, Modality};
use crate::error::{Error, Result};

/// A request for the expert label of one memory under one seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelQuery {
    pub query_id: String,
    pub seed: u64,
    pub sample_index: usize,
    pub sample_id: String,
}

impl LabelQuery {
    pub fn new(seed: u64, sample_index: usize, sample_id: &str) -> Self {
        Self {
            query_id: format!("s{seed}-{sample_index}"),
            seed,
            sample_index,
            sample_id: sample_id.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Label(usize),
    /// The expert declined; the seed loses its column.
    Skip,
}

pub trait LabelProvider {
    /// Called once with every batch before the first [`label_batch`].
    ///
    /// [`label_batch`]: LabelProvider::label_batch
    fn prepare(&mut self, _batches: &[Vec<LabelQuery>]) -> Result<()> {
        Ok(())
    }

    /// Answers all queries of one seed, in order. `Err` aborts the run.
    fn label_batch(&mut self, ds: &Dataset, seed: u64, queries: &[LabelQuery]) -> Result<Vec<Answer>>;
}

/// Answers from ground truth, optionally flipping a fixed random subset of
/// samples to simulate expert mistakes.
#[derive(Debug, Clone)]
pub struct OracleProvider {
    answers: GroundTruth,
}

impl OracleProvider {
    pub fn new(gt: GroundTruth) -> Self {
        Self { answers: gt }
    }

    /// Each sample's answer is replaced by a different, uniformly chosen class
    /// with probability `rate`. The flipped set depends only on `(gt, seed)`.
    pub fn with_label_noise(gt: &GroundTruth, n_classes: usize, rate: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let answers = gt
            .iter()
            .map(|(id, c)| {
                let flip = rng.random::<f64>() < rate;
                let other = rng.random_range(1..n_classes.max(2));
                let c = if flip { (c + other) % n_classes } else { c };
                (id.to_string(), c)
            })
            .collect();
        Self {
            answers: GroundTruth::new(answers),
        }
    }

    pub fn answer(&self, sample_id: &str) -> Result<usize> {
        self.answers
            .get(sample_id)
            .ok_or_else(|| Error::UnknownId(sample_id.to_string()))
    }
}

impl LabelProvider for OracleProvider {
    fn label_batch(&mut self, _: &Dataset, _: u64, queries: &[LabelQuery]) -> Result<Vec<Answer>> {
        queries
            .iter()
            .map(|q| self.answer(&q.sample_id).map(Answer::Label))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Complete,
    Aborted,
}

/// Why a label submission was rejected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown query `{0}`")]
    UnknownQuery(String),
    #[error("query `{0}` already answered")]
    Duplicate(String),
    #[error("labeling budget of {0} exhausted")]
    BudgetExhausted(usize),
    #[error("class {class} out of range for {n_classes} classes")]
    InvalidClass { class: usize, n_classes: usize },
    #[error("session is {0:?}")]
    Closed(SessionStatus),
    #[error("journal write failed: {0}")]
    Journal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Submitted {
    pub accepted: bool,
    pub consumed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeedProgress {
    pub total: usize,
    pub answered: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub total_queries: usize,
    pub answered: usize,
    pub per_seed_counts: BTreeMap<u64, SeedProgress>,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct JournalHeader {
    session: String,
    n_l: usize,
    classes: Vec<String>,
}

const JOURNAL_MAGIC: &str = "#memlabel-journal ";

/// One accepted label as journaled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JournalEntry {
    pub query_id: String,
    pub sample_id: String,
    pub seed: u64,
    pub class_index: usize,
}

/// Human-in-the-loop labeling state: registered queries, accepted labels and
/// the budget. With a journal, every accepted label is appended and synced
/// before [`submit`](LabelSession::submit) returns.
#[derive(Debug)]
pub struct LabelSession {
    id: String,
    label_space: LabelSpace,
    limit: usize,
    queries: Vec<LabelQuery>,
    positions: HashMap<String, usize>,
    accepted: BTreeMap<String, JournalEntry>,
    journal: Option<(PathBuf, File)>,
    aborted: bool,
}

impl LabelSession {
    pub fn in_memory(id: impl Into<String>, label_space: LabelSpace, limit: usize) -> Self {
        Self {
            id: id.into(),
            label_space,
            limit,
            queries: Vec::new(),
            positions: HashMap::new(),
            accepted: BTreeMap::new(),
            journal: None,
            aborted: false,
        }
    }

    /// Opens (or creates) a journaled session. An existing journal must carry
    /// the same session id, budget and label space; its labels are replayed.
    /// A torn final line, from a crash mid-append, is discarded.
    pub fn open(
        path: impl AsRef<Path>,
        id: impl Into<String>,
        label_space: LabelSpace,
        limit: usize,
    ) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut session = Self::in_memory(id, label_space, limit);
        let header = JournalHeader {
            session: session.id.clone(),
            n_l: limit,
            classes: session.label_space.classes().to_vec(),
        };
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            let complete_len = text.rfind('\n').map_or(0, |i| i + 1);
            if complete_len < text.len() {
                OpenOptions::new().write(true).open(&path)?.set_len(complete_len as u64)?;
            }
            let mut lines = text[..complete_len].lines();
            let found: JournalHeader = lines
                .next()
                .and_then(|l| l.strip_prefix(JOURNAL_MAGIC))
                .and_then(|l| serde_json::from_str(l).ok())
                .ok_or_else(|| Error::Session(format!("{}: bad journal header", path.display())))?;
            if found != header {
                return Err(Error::Session(format!(
                    "{}: journal belongs to session `{}` (n_l={}, classes {:?})",
                    path.display(),
                    found.session,
                    found.n_l,
                    found.classes
                )));
            }
            for (i, line) in lines.enumerate() {
                let entry = parse_journal_line(line)
                    .ok_or_else(|| Error::parse(&path, i + 2, "bad journal entry"))?;
                if entry.class_index >= session.label_space.len() {
                    return Err(Error::parse(&path, i + 2, "class index out of range"));
                }
                if session.accepted.contains_key(&entry.query_id) {
                    return Err(Error::parse(&path, i + 2, format!("query `{}` journaled twice", entry.query_id)));
                }
                session.accepted.insert(entry.query_id.clone(), entry);
            }
            if session.accepted.len() > limit {
                return Err(Error::Session("journal exceeds the labeling budget".into()));
            }
        } else {
            let mut f = File::create(&path)?;
            writeln!(f, "{JOURNAL_MAGIC}{}", serde_json::to_string(&header).unwrap())?;
            f.sync_all()?;
        }
        let file = OpenOptions::new().append(true).open(&path)?;
        session.journal = Some((path, file));
        Ok(session)
    }

    /// Adds queries to the queue; already-registered ids are ignored. A
    /// replayed label whose sample or seed disagrees is an error.
    pub fn register(&mut self, queries: &[LabelQuery]) -> Result<()> {
        for q in queries {
            if self.positions.contains_key(&q.query_id) {
                continue;
            }
            if let Some(e) = self.accepted.get(&q.query_id) {
                if e.sample_id != q.sample_id || e.seed != q.seed {
                    return Err(Error::Session(format!(
                        "journaled query `{}` was for sample `{}` seed {}, now `{}` seed {}",
                        q.query_id, e.sample_id, e.seed, q.sample_id, q.seed
                    )));
                }
            }
            self.positions.insert(q.query_id.clone(), self.queries.len());
            self.queries.push(q.clone());
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn consumed(&self) -> usize {
        self.accepted.len()
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn query(&self, query_id: &str) -> Option<&LabelQuery> {
        self.positions.get(query_id).map(|&i| &self.queries[i])
    }

    pub fn answer(&self, query_id: &str) -> Option<usize> {
        self.accepted.get(query_id).map(|e| e.class_index)
    }

    pub fn accepted(&self) -> impl Iterator<Item = &JournalEntry> {
        self.accepted.values()
    }

    /// Unanswered registered queries in registration order.
    pub fn pending(&self) -> impl Iterator<Item = &LabelQuery> {
        self.queries
            .iter()
            .filter(|q| !self.accepted.contains_key(&q.query_id))
    }

    pub fn status(&self) -> SessionStatus {
        if self.aborted {
            SessionStatus::Aborted
        } else if !self.queries.is_empty() && self.pending().next().is_none() {
            SessionStatus::Complete
        } else {
            SessionStatus::Open
        }
    }

    pub fn abort(&mut self) {
        self.aborted = true;
    }

    pub fn submit(&mut self, query_id: &str, class_index: usize) -> Result<Submitted, SubmitError> {
        if self.aborted {
            return Err(SubmitError::Closed(SessionStatus::Aborted));
        }
        let query = self
            .query(query_id)
            .ok_or_else(|| SubmitError::UnknownQuery(query_id.to_string()))?
            .clone();
        if self.accepted.contains_key(query_id) {
            return Err(SubmitError::Duplicate(query_id.to_string()));
        }
        if class_index >= self.label_space.len() {
            return Err(SubmitError::InvalidClass {
                class: class_index,
                n_classes: self.label_space.len(),
            });
        }
        if self.accepted.len() >= self.limit {
            return Err(SubmitError::BudgetExhausted(self.limit));
        }
        let entry = JournalEntry {
            query_id: query.query_id.clone(),
            sample_id: query.sample_id.clone(),
            seed: query.seed,
            class_index,
        };
        if let Some((_, file)) = &mut self.journal {
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            let line = format!(
                "{},{},{},{},{ts}\n",
                entry.query_id, entry.sample_id, entry.seed, entry.class_index
            );
            file.write_all(line.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|e| SubmitError::Journal(e.to_string()))?;
        }
        self.accepted.insert(entry.query_id.clone(), entry);
        Ok(Submitted {
            accepted: true,
            consumed: self.consumed(),
        })
    }

    pub fn progress(&self) -> Progress {
        let mut per_seed: BTreeMap<u64, SeedProgress> = BTreeMap::new();
        for q in &self.queries {
            let e = per_seed.entry(q.seed).or_insert(SeedProgress { total: 0, answered: 0 });
            e.total += 1;
            if self.accepted.contains_key(&q.query_id) {
                e.answered += 1;
            }
        }
        Progress {
            total_queries: self.queries.len(),
            answered: per_seed.values().map(|s| s.answered).sum(),
            per_seed_counts: per_seed,
            status: self.status(),
        }
    }
}

fn parse_journal_line(line: &str) -> Option<JournalEntry> {
    let mut parts = line.split(',');
    let query_id = parts.next()?.to_string();
    let sample_id = parts.next()?.to_string();
    let seed = parts.next()?.parse().ok()?;
    let class_index = parts.next()?.parse().ok()?;
    let _timestamp: u64 = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some(JournalEntry {
        query_id,
        sample_id,
        seed,
        class_index,
    })
}

const SPARK: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];

/// One-line summary of a sample for terminal prompts.
pub fn preview_text(ds: &Dataset, index: usize) -> String {
    let s = ds.sample(index);
    let v = &s.values;
    match ds.modality() {
        Modality::TimeSeries => {
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            // downsample long series to at most 60 glyphs
            let step = v.len().div_ceil(60);
            let spark: String = v
                .chunks(step)
                .map(|c| {
                    let x = c.iter().sum::<f64>() / c.len() as f64;
                    let level = if max > min { (x - min) / (max - min) } else { 0.5 };
                    SPARK[((level * 7.0).round() as usize).min(7)]
                })
                .collect();
            format!(
                "{}  {spark}  len={} min={min:.3} max={max:.3} mean={mean:.3}",
                s.id,
                v.len()
            )
        }
        _ => {
            let head: Vec<String> = v.iter().take(5).map(|x| format!("{x:.3}")).collect();
            let more = if v.len() > 5 { ", ..." } else { "" };
            format!("{}  [{}{more}] ({} values)", s.id, head.join(", "), v.len())
        }
    }
}

/// Prompts for each memory label on a line-oriented terminal. Input is a
/// class index, `skip` or `abort`; anything else is re-prompted.
pub struct InteractiveProvider<R, W> {
    input: R,
    output: W,
    session: LabelSession,
}

impl<R: BufRead, W: Write> InteractiveProvider<R, W> {
    pub fn new(input: R, output: W, session: LabelSession) -> Self {
        Self {
            input,
            output,
            session,
        }
    }

    pub fn session(&self) -> &LabelSession {
        &self.session
    }

    pub fn into_session(self) -> LabelSession {
        self.session
    }

    fn prompt(&mut self, ds: &Dataset, q: &LabelQuery, position: usize, total: usize) -> Result<Answer> {
        let menu: Vec<String> = self
            .session
            .label_space()
            .classes()
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{i}={c}"))
            .collect();
        loop {
            writeln!(
                self.output,
                "[seed {} {position}/{total}] budget {}/{}\n  {}\n  {}  (skip, abort)",
                q.seed,
                self.session.consumed(),
                self.session.limit(),
                preview_text(ds, q.sample_index),
                menu.join("  ")
            )?;
            write!(self.output, "> ")?;
            self.output.flush()?;
            let mut line = String::new();
            if self.input.read_line(&mut line)? == 0 {
                self.session.abort();
                return Err(Error::ProviderRefused("input closed".into()));
            }
            match line.trim() {
                "abort" => {
                    self.session.abort();
                    return Err(Error::ProviderRefused("aborted by user".into()));
                }
                "skip" => return Ok(Answer::Skip),
                other => match other.parse::<usize>() {
                    Ok(c) => match self.session.submit(&q.query_id, c) {
                        Ok(_) => return Ok(Answer::Label(c)),
                        Err(e @ SubmitError::InvalidClass { .. }) => {
                            writeln!(self.output, "  {e}")?;
                        }
                        Err(e) => return Err(Error::Session(e.to_string())),
                    },
                    Err(_) => writeln!(self.output, "  enter a class index, `skip` or `abort`")?,
                },
            }
        }
    }
}

impl<R: BufRead, W: Write> LabelProvider for InteractiveProvider<R, W> {
    fn prepare(&mut self, batches: &[Vec<LabelQuery>]) -> Result<()> {
        for b in batches {
            self.session.register(b)?;
        }
        Ok(())
    }

    fn label_batch(&mut self, ds: &Dataset, _seed: u64, queries: &[LabelQuery]) -> Result<Vec<Answer>> {
        self.session.register(queries)?;
        let total = queries.len();
        queries
            .iter()
            .enumerate()
            .map(|(i, q)| match self.session.answer(&q.query_id) {
                Some(c) => Ok(Answer::Label(c)),
                None => self.prompt(ds, q, i + 1, total),
            })
            .collect()
    }
}
