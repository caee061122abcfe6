//! Scoring against ground truth, the one-vs-all suite and the threshold
//! ablation sweep.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Dataset, GroundTruth, LabelSpace};
use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::label_model::{Aggregator, EmOptions, ProbabilisticLabels};
use crate::labeling::OracleProvider;
use crate::memory::MemoryGenConfig;
use crate::weak_label::{candidate_memories, label_and_induce, Budget};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Run parameters attached to a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReportMeta {
    pub threshold: Option<f64>,
    pub n_l: Option<usize>,
    pub n_s: Option<usize>,
    pub n_w: Option<usize>,
    pub aggregator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub total: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub positive_class: Option<usize>,
    pub binary_f1: Option<f64>,
    pub weighted_f1: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub meta: ReportMeta,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Compares hard labels against ground truth. Every predicted id must be in
/// `gt`. Zero denominators give 0 for precision, recall and F1.
pub fn score(pred: &ProbabilisticLabels, gt: &GroundTruth, positive_class: Option<usize>) -> Result<EvalReport> {
    let c = pred.n_classes();
    if let Some(p) = positive_class.filter(|&p| p >= c) {
        return Err(Error::InvalidConfig(format!("positive class {p} out of range")));
    }
    let mut confusion = vec![vec![0usize; c]; c];
    for (i, id) in pred.sample_ids().iter().enumerate() {
        let truth = gt.get(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
        if truth >= c {
            return Err(Error::Dimension(format!("ground-truth class {truth} for `{id}` out of range")));
        }
        confusion[truth][pred.hard_label(i)] += 1;
    }
    Ok(report_from_confusion(confusion, positive_class))
}

pub fn report_from_confusion(confusion: Vec<Vec<usize>>, positive_class: Option<usize>) -> EvalReport {
    let c = confusion.len();
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = (0..c).map(|t| confusion[t][k]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        per_class.iter().map(|m| m.support as f64 * m.f1).sum::<f64>() / total as f64
    };
    EvalReport {
        total,
        accuracy: ratio(correct, total),
        binary_f1: positive_class.map(|p| per_class[p].f1),
        per_class,
        positive_class,
        weighted_f1,
        confusion,
        meta: ReportMeta::default(),
    }
}

impl EvalReport {
    /// F1 of the positive class when declared, weighted F1 otherwise.
    pub fn headline_f1(&self) -> f64 {
        self.binary_f1.unwrap_or(self.weighted_f1)
    }

    pub fn to_table(&self, classes: &[String]) -> String {
        let mut out = String::new();
        let m = &self.meta;
        if let Some(a) = &m.aggregator {
            writeln!(out, "aggregator  {a}").unwrap();
        }
        if let Some(t) = m.threshold {
            writeln!(out, "threshold   {t}").unwrap();
        }
        if let (Some(l), Some(s), Some(w)) = (m.n_l, m.n_s, m.n_w) {
            writeln!(out, "budget      N_L={l} N_s={s} N_w={w}").unwrap();
        }
        writeln!(out, "samples     {}", self.total).unwrap();
        writeln!(out, "accuracy    {:.4}", self.accuracy).unwrap();
        if let (Some(p), Some(f)) = (self.positive_class, self.binary_f1) {
            writeln!(out, "f1          {f:.4} (positive: {})", class_name(classes, p)).unwrap();
        }
        writeln!(out, "weighted f1 {:.4}\n", self.weighted_f1).unwrap();
        let width = classes.iter().map(String::len).max().unwrap_or(5).max(5);
        writeln!(out, "{:<width$}  precision  recall      f1  support", "class").unwrap();
        for (k, cm) in self.per_class.iter().enumerate() {
            writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>6.4}  {:>6.4}  {:>7}",
                class_name(classes, k),
                cm.precision,
                cm.recall,
                cm.f1,
                cm.support
            )
            .unwrap();
        }
        out.push_str("\nconfusion (rows: true, columns: predicted)\n");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>7}")).collect();
            writeln!(out, "{}", cells.join("")).unwrap();
        }
        out
    }

    /// `class,precision,recall,f1,support` rows plus `overall` rows.
    pub fn to_csv(&self, classes: &[String]) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for (k, cm) in self.per_class.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                class_name(classes, k),
                cm.precision,
                cm.recall,
                cm.f1,
                cm.support
            )
            .unwrap();
        }
        writeln!(out, "overall_accuracy,,,{},{}", self.accuracy, self.total).unwrap();
        writeln!(out, "overall_weighted_f1,,,{},{}", self.weighted_f1, self.total).unwrap();
        if let Some(f) = self.binary_f1 {
            writeln!(out, "overall_binary_f1,,,{f},{}", self.total).unwrap();
        }
        out
    }
}

fn class_name(classes: &[String], k: usize) -> String {
    classes.get(k).cloned().unwrap_or_else(|| k.to_string())
}

/// Shared knobs for pipeline-driven evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub memory: MemoryGenConfig,
    pub seeds: Vec<u64>,
    pub budget: usize,
    pub em: EmOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OneVsAllSummary {
    pub aggregator: String,
    /// `(class name, report)` per binary problem.
    pub reports: Vec<(String, EvalReport)>,
    pub mean_accuracy: f64,
    pub mean_f1: f64,
    pub std_accuracy: f64,
    pub std_f1: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs the full pipeline once per class on `{rest, class}` relabelings
/// with an oracle provider, and averages the binary scores.
pub fn one_vs_all_suite(
    ds: &Dataset,
    matrix: &DistanceMatrix,
    gt: &GroundTruth,
    label_space: &LabelSpace,
    params: &EvalParams,
    aggregator: Aggregator,
) -> Result<OneVsAllSummary> {
    // memory sets do not depend on labels
    let candidates = candidate_memories(matrix, &params.memory, &params.seeds)?;
    let reports = (0..label_space.len())
        .into_par_iter()
        .map(|class| {
            let binary = gt.one_vs_rest(class);
            let mut oracle = OracleProvider::new(binary.clone());
            let out = label_and_induce(ds, matrix, &candidates, Budget::new(params.budget), 2, &mut oracle)?;
            let pred = aggregator.apply(&out.matrix, 2, &params.em)?;
            let mut report = score(&pred, &binary, Some(1))?;
            report.meta = ReportMeta {
                threshold: Some(params.memory.distance_threshold),
                n_l: Some(params.budget),
                n_s: Some(out.budget.consumed),
                n_w: Some(out.matrix.n_functions()),
                aggregator: Some(aggregator.as_str().to_string()),
            };
            Ok((label_space.classes()[class].clone(), report))
        })
        .collect::<Result<Vec<_>>>()?;
    let acc: Vec<f64> = reports.iter().map(|(_, r)| r.accuracy).collect();
    let f1: Vec<f64> = reports.iter().map(|(_, r)| r.headline_f1()).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&acc);
    let (mean_f1, std_f1) = mean_std(&f1);
    Ok(OneVsAllSummary {
        aggregator: aggregator.as_str().to_string(),
        reports,
        mean_accuracy,
        mean_f1,
        std_accuracy,
        std_f1,
    })
}

impl OneVsAllSummary {
    pub fn to_table(&self) -> String {
        let width = self.reports.iter().map(|(c, _)| c.len()).max().unwrap_or(5).max(7);
        let mut out = format!("one-vs-all ({})\n{:<width$}  accuracy      f1  N_s  N_w\n", self.aggregator, "class");
        for (c, r) in &self.reports {
            writeln!(
                out,
                "{c:<width$}  {:>8.4}  {:>6.4}  {:>3}  {:>3}",
                r.accuracy,
                r.headline_f1(),
                r.meta.n_s.unwrap_or(0),
                r.meta.n_w.unwrap_or(0)
            )
            .unwrap();
        }
        writeln!(
            out,
            "{:<width$}  {:.3} ({:.3})  {:.3} ({:.3})",
            "average", self.mean_accuracy, self.std_accuracy, self.mean_f1, self.std_f1
        )
        .unwrap();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub threshold: f64,
    pub n_l: usize,
    pub n_s: usize,
    pub n_w: usize,
    pub aggregator: String,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    /// `|M^k|` of every candidate seed, accepted or not.
    pub seed_sizes: Vec<usize>,
    /// Why the row has no scores.
    pub skipped: Option<String>,
}

/// One oracle-labeled pipeline run per `(t, aggregator)`. Infeasible budgets
/// and failed fits become skipped rows rather than errors.
pub fn ablation_sweep(
    ds: &Dataset,
    matrix: &DistanceMatrix,
    gt: &GroundTruth,
    n_classes: usize,
    thresholds: &[f64],
    params: &EvalParams,
    aggregators: &[Aggregator],
) -> Result<Vec<AblationRow>> {
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::InvalidConfig(format!("threshold {t} is not positive")));
    }
    let positive = (n_classes == 2).then_some(1);
    let rows: Vec<Vec<AblationRow>> = thresholds
        .par_iter()
        .map(|&t| -> Result<Vec<AblationRow>> {
            let cfg = MemoryGenConfig {
                distance_threshold: t,
                ..params.memory
            };
            let candidates = candidate_memories(matrix, &cfg, &params.seeds)?;
            let seed_sizes: Vec<usize> = candidates.iter().map(|c| c.len()).collect();
            let mut oracle = OracleProvider::new(gt.clone());
            let labeled = label_and_induce(ds, matrix, &candidates, Budget::new(params.budget), n_classes, &mut oracle);
            let row = |agg: Aggregator| AblationRow {
                threshold: t,
                n_l: params.budget,
                n_s: 0,
                n_w: 0,
                aggregator: agg.as_str().to_string(),
                accuracy: None,
                f1: None,
                seed_sizes: seed_sizes.clone(),
                skipped: None,
            };
            let out = match labeled {
                Ok(out) => out,
                Err(Error::BudgetInfeasible(why)) => {
                    return Ok(aggregators
                        .iter()
                        .map(|&a| AblationRow {
                            skipped: Some(why.clone()),
                            ..row(a)
                        })
                        .collect())
                }
                Err(e) => return Err(e),
            };
            aggregators
                .iter()
                .map(|&agg| {
                    let base = AblationRow {
                        n_s: out.budget.consumed,
                        n_w: out.matrix.n_functions(),
                        ..row(agg)
                    };
                    match agg.apply(&out.matrix, n_classes, &params.em) {
                        Ok(pred) => {
                            let r = score(&pred, gt, positive)?;
                            Ok(AblationRow {
                                accuracy: Some(r.accuracy),
                                f1: Some(r.headline_f1()),
                                ..base
                            })
                        }
                        Err(Error::Degenerate(why)) => Ok(AblationRow {
                            skipped: Some(why),
                            ..base
                        }),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `t,N_L,N_s,N_w,aggregator,accuracy,f1`; skipped rows carry `NA` scores.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("t,N_L,N_s,N_w,aggregator,accuracy,f1\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.threshold,
            r.n_l,
            r.n_s,
            r.n_w,
            r.aggregator,
            opt(r.accuracy),
            opt(r.f1)
        )
        .unwrap();
    }
    out
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("         t    N_L    N_s  N_w  aggregator   accuracy      f1  note\n");
    for r in rows {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let t = r.threshold.to_string();
        let t = if t.len() > 10 { format!("{:.3}", r.threshold) } else { t };
        let line = format!(
            "{t:>10}  {:>5}  {:>5}  {:>3}  {:<11}  {:>8}  {:>6}  {}",
            r.n_l,
            r.n_s,
            r.n_w,
            r.aggregator,
            fmt(r.accuracy),
            fmt(r.f1),
            r.skipped.as_deref().unwrap_or("")
        );
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
