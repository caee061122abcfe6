//! Aggregation of weak-label columns into probabilistic labels.
//!
//! Two aggregators: plain majority vote, and a generative model in which
//! labeling functions vote independently given the true class. The latter
//! has a class prior and one `|Y| × (|Y|+1)` confusion matrix per function
//! (last column: abstain) and is fit by expectation-maximization with an
//! additive pseudo-count on every cell.
//!
//! EM works on distinct vote patterns with multiplicities, visited in sorted
//! order, so fitted parameters do not depend on sample order at all.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::{content_lines, push_joined};
use crate::error::{Error, Result};
use crate::weak_label::WeakLabelMatrix;

/// Per-sample class distributions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticLabels {
    sample_ids: Vec<String>,
    n_classes: usize,
    probs: Vec<f64>,
}

impl ProbabilisticLabels {
    pub fn new(sample_ids: Vec<String>, n_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != sample_ids.len() * n_classes {
            return Err(Error::Dimension(format!(
                "{} probabilities for {} samples × {n_classes} classes",
                probs.len(),
                sample_ids.len()
            )));
        }
        Ok(Self {
            sample_ids,
            n_classes,
            probs,
        })
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn distribution(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_classes..(i + 1) * self.n_classes]
    }

    /// Argmax with the lowest class index winning ties.
    pub fn hard_label(&self, i: usize) -> usize {
        argmax(self.distribution(i))
    }

    pub fn confidence(&self, i: usize) -> f64 {
        self.distribution(i)[self.hard_label(i)]
    }

    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.hard_label(i)).collect()
    }

    /// `id,p_0,...,p_{|Y|-1},hard_label,confidence` per sample.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, id) in self.sample_ids.iter().enumerate() {
            out.push_str(id);
            out.push(',');
            push_joined(&mut out, self.distribution(i));
            writeln!(out, ",{},{}", self.hard_label(i), self.confidence(i)).unwrap();
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut ids = Vec::new();
        let mut probs = Vec::new();
        let mut width = None;
        for (ln, line) in content_lines(&text) {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() < 5 {
                return Err(Error::parse(path, ln, "expected `id,p_0,...,hard_label,confidence`"));
            }
            let k = cells.len() - 3;
            if *width.get_or_insert(k) != k {
                return Err(Error::parse(path, ln, "inconsistent number of classes"));
            }
            let row = cells[1..=k]
                .iter()
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(path, ln, "bad probability"))?;
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::parse(path, ln, "row is not a distribution"));
            }
            let hard: usize = cells[k + 1]
                .parse()
                .map_err(|_| Error::parse(path, ln, "bad hard label"))?;
            if hard != argmax(&row) {
                return Err(Error::parse(path, ln, "hard label is not the argmax"));
            }
            ids.push(cells[0].to_string());
            probs.extend(row);
        }
        Self::new(ids, width.unwrap_or(0), probs)
    }
}

/// Probabilities closer than this count as tied, so rounding in the
/// posterior cannot override the lowest-index rule.
const TIE_TOL: f64 = 1e-12;

fn argmax(v: &[f64]) -> usize {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.iter().position(|&p| p >= max - TIE_TOL).unwrap_or(0)
}

fn check_votes(m: &WeakLabelMatrix, n_classes: usize) -> Result<()> {
    if n_classes < 2 {
        return Err(Error::Dimension(format!("need at least 2 classes, got {n_classes}")));
    }
    if m.n_functions() == 0 || m.n_samples() == 0 {
        return Err(Error::Empty("weak-label matrix"));
    }
    if let Some(v) = m.max_vote().filter(|&v| v >= n_classes) {
        return Err(Error::Dimension(format!("vote {v} out of range for {n_classes} classes")));
    }
    Ok(())
}

fn vote_distribution(row: &[Option<usize>], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_classes];
    let mut n = 0.0;
    for &c in row.iter().flatten() {
        counts[c] += 1.0;
        n += 1.0;
    }
    if n == 0.0 {
        return vec![1.0 / n_classes as f64; n_classes];
    }
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}

/// Vote frequencies over non-abstaining functions; uniform when every
/// function abstains.
pub fn majority_vote(m: &WeakLabelMatrix, n_classes: usize) -> Result<ProbabilisticLabels> {
    check_votes(m, n_classes)?;
    let probs = (0..m.n_samples())
        .flat_map(|i| vote_distribution(m.row(i), n_classes))
        .collect();
    ProbabilisticLabels::new(m.sample_ids().to_vec(), n_classes, probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Pseudo-count added to every confusion cell (and prior cell).
    pub smoothing: f64,
    /// Keeps the class prior fixed instead of estimating it.
    pub fixed_prior: Option<Vec<f64>>,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 500,
            smoothing: 1.0,
            fixed_prior: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelModelParams {
    pub class_prior: Vec<f64>,
    /// `confusion[k][y][v]` = P(function k votes v | true class y); `v = |Y|`
    /// is abstain.
    pub confusion: Vec<Vec<Vec<f64>>>,
}

impl LabelModelParams {
    pub fn n_classes(&self) -> usize {
        self.class_prior.len()
    }

    pub fn n_functions(&self) -> usize {
        self.confusion.len()
    }

    /// P(correct vote | y) for function `k`.
    pub fn accuracy(&self, k: usize, y: usize) -> f64 {
        self.confusion[k][y][y]
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        let prior = self
            .class_prior
            .iter()
            .zip(&other.class_prior)
            .map(|(a, b)| (a - b).abs());
        let conf = self
            .confusion
            .iter()
            .flatten()
            .flatten()
            .zip(other.confusion.iter().flatten().flatten())
            .map(|(a, b)| (a - b).abs());
        prior.chain(conf).fold(0.0, f64::max)
    }

    /// Human-readable dump of the prior and every confusion matrix.
    pub fn to_text(&self, function_names: &[String]) -> String {
        let c = self.n_classes();
        let mut out = String::new();
        writeln!(out, "classes {c}").unwrap();
        out.push_str("prior");
        for p in &self.class_prior {
            write!(out, " {p:.6}").unwrap();
        }
        out.push('\n');
        for (k, m) in self.confusion.iter().enumerate() {
            let name = function_names.get(k).map_or("", String::as_str);
            writeln!(out, "\nfunction {k} {name}").unwrap();
            out.push_str("  true\\vote");
            for v in 0..c {
                write!(out, " {v:>9}").unwrap();
            }
            out.push_str("   abstain\n");
            for (y, row) in m.iter().enumerate() {
                write!(out, "  {y:>10}").unwrap();
                for p in row {
                    write!(out, " {p:>9.6}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Fitted model plus the per-iteration objective trace.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelModelFit {
    pub params: LabelModelParams,
    /// Observed-data log-likelihood of each successive parameter set.
    pub log_likelihood: Vec<f64>,
    /// Log-likelihood plus the smoothing log-prior; EM never decreases it.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Distinct vote rows and their counts, in sorted order.
type Patterns = Vec<(Vec<Option<usize>>, f64)>;

fn patterns(m: &WeakLabelMatrix) -> Patterns {
    let mut map: BTreeMap<Vec<Option<usize>>, usize> = BTreeMap::new();
    for i in 0..m.n_samples() {
        *map.entry(m.row(i).to_vec()).or_default() += 1;
    }
    map.into_iter().map(|(k, n)| (k, n as f64)).collect()
}

fn log_joint(params: &LabelModelParams, row: &[Option<usize>]) -> Vec<f64> {
    let c = params.n_classes();
    (0..c)
        .map(|y| {
            let mut lp = params.class_prior[y].ln();
            for (k, v) in row.iter().enumerate() {
                lp += params.confusion[k][y][v.unwrap_or(c)].ln();
            }
            lp
        })
        .collect()
}

/// Normalizes log-weights in place; returns their log-sum-exp.
fn softmax_in_place(lw: &mut [f64]) -> f64 {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        let u = 1.0 / lw.len() as f64;
        lw.iter_mut().for_each(|x| *x = u);
        return f64::NEG_INFINITY;
    }
    let mut total = 0.0;
    for x in lw.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    lw.iter_mut().for_each(|x| *x /= total);
    max + total.ln()
}

fn e_step(params: &LabelModelParams, pats: &Patterns) -> (Vec<Vec<f64>>, f64) {
    let mut ll = 0.0;
    let resp = pats
        .iter()
        .map(|(row, n)| {
            let mut lw = log_joint(params, row);
            ll += n * softmax_in_place(&mut lw);
            lw
        })
        .collect();
    (resp, ll)
}

fn m_step(resp: &[Vec<f64>], pats: &Patterns, n_fns: usize, c: usize, opts: &EmOptions) -> LabelModelParams {
    let a = opts.smoothing;
    let mut class_mass = vec![0.0; c];
    let mut counts = vec![vec![vec![0.0; c + 1]; c]; n_fns];
    for ((row, n), r) in pats.iter().zip(resp) {
        for y in 0..c {
            let w = n * r[y];
            class_mass[y] += w;
            for (k, v) in row.iter().enumerate() {
                counts[k][y][v.unwrap_or(c)] += w;
            }
        }
    }
    let total: f64 = class_mass.iter().sum();
    let class_prior = match &opts.fixed_prior {
        Some(p) => p.clone(),
        None => class_mass
            .iter()
            .map(|m| (m + a) / (total + a * c as f64))
            .collect(),
    };
    let confusion = counts
        .into_iter()
        .map(|per_class| {
            per_class
                .into_iter()
                .zip(&class_mass)
                .map(|(cells, mass)| {
                    let denom = mass + a * (c + 1) as f64;
                    cells.into_iter().map(|x| (x + a) / denom).collect()
                })
                .collect()
        })
        .collect();
    LabelModelParams {
        class_prior,
        confusion,
    }
}

fn log_prior_penalty(params: &LabelModelParams, opts: &EmOptions) -> f64 {
    let a = opts.smoothing;
    if a == 0.0 {
        return 0.0;
    }
    let conf: f64 = params.confusion.iter().flatten().flatten().map(|p| p.ln()).sum();
    let prior: f64 = if opts.fixed_prior.is_none() {
        params.class_prior.iter().map(|p| p.ln()).sum()
    } else {
        0.0
    };
    a * (conf + prior)
}

fn check_options(opts: &EmOptions, c: usize) -> Result<()> {
    if !(opts.smoothing >= 0.0 && opts.smoothing.is_finite()) {
        return Err(Error::InvalidConfig("smoothing must be finite and >= 0".into()));
    }
    if let Some(p) = &opts.fixed_prior {
        let sum: f64 = p.iter().sum();
        if p.len() != c || p.iter().any(|&x| !(x > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "fixed prior must be {c} positive probabilities summing to 1"
            )));
        }
    }
    Ok(())
}

/// Fits the independent-functions model by EM, initialized from
/// majority-vote distributions.
pub fn fit_label_model(m: &WeakLabelMatrix, n_classes: usize, opts: &EmOptions) -> Result<LabelModelFit> {
    check_votes(m, n_classes)?;
    check_options(opts, n_classes)?;
    if m.n_functions() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 labeling functions, got {}",
            m.n_functions()
        )));
    }
    let pats = patterns(m);
    if pats.iter().all(|(row, _)| row.iter().all(Option::is_none)) {
        return Err(Error::Degenerate("every vote abstains".into()));
    }
    let n_fns = m.n_functions();
    let init: Vec<Vec<f64>> = pats
        .iter()
        .map(|(row, _)| vote_distribution(row, n_classes))
        .collect();
    let mut params = m_step(&init, &pats, n_fns, n_classes, opts);

    let mut log_likelihood = Vec::new();
    let mut objective = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let (resp, ll) = e_step(&params, &pats);
        log_likelihood.push(ll);
        objective.push(ll + log_prior_penalty(&params, opts));
        if converged || iterations >= opts.max_iters {
            break;
        }
        let next = m_step(&resp, &pats, n_fns, n_classes, opts);
        converged = next.max_abs_diff(&params) < opts.tol;
        params = next;
        iterations += 1;
    }
    Ok(LabelModelFit {
        params,
        log_likelihood,
        objective,
        iterations,
        converged,
    })
}

/// Posterior `∝ prior(y) · Π_k confusion_k(vote_k | y)` per sample.
pub fn predict(params: &LabelModelParams, m: &WeakLabelMatrix) -> Result<ProbabilisticLabels> {
    let c = params.n_classes();
    if params.n_functions() != m.n_functions() {
        return Err(Error::Dimension(format!(
            "model has {} functions, matrix has {}",
            params.n_functions(),
            m.n_functions()
        )));
    }
    if params.confusion.iter().flatten().any(|row| row.len() != c + 1)
        || params.confusion.iter().any(|k| k.len() != c)
    {
        return Err(Error::Dimension("confusion matrices must be |Y| × (|Y|+1)".into()));
    }
    check_votes(m, c)?;
    let probs = (0..m.n_samples())
        .flat_map(|i| {
            let mut lw = log_joint(params, m.row(i));
            softmax_in_place(&mut lw);
            lw
        })
        .collect();
    ProbabilisticLabels::new(m.sample_ids().to_vec(), c, probs)
}

/// Which aggregator turns weak labels into probabilistic labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregator {
    Majority,
    LabelModel,
}

impl Aggregator {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::Majority => "majority",
            Aggregator::LabelModel => "label-model",
        }
    }

    pub fn apply(
        self,
        m: &WeakLabelMatrix,
        n_classes: usize,
        opts: &EmOptions,
    ) -> Result<ProbabilisticLabels> {
        match self {
            Aggregator::Majority => majority_vote(m, n_classes),
            Aggregator::LabelModel => {
                let fit = fit_label_model(m, n_classes, opts)?;
                predict(&fit.params, m)
            }
        }
    }
}
