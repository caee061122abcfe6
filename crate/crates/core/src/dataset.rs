//! Dataset ingestion, validation and synthetic generation.
//!
//! Three line-oriented text formats are supported:
//!
//! * time series: `id,v1,v2,...,vK`, one sample per line, `K` may vary;
//! * feature / probability vectors: `id<TAB>v1,v2,...,vD`, fixed `D`;
//! * label space: one class name per line, line order gives the class index.
//!
//! Ground truth files hold `id,class_index` pairs. Blank lines and lines
//! starting with `#` are ignored everywhere.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of a probability vector.
pub const PROBABILITY_SUM_TOL: f64 = 1e-6;

/// Ordered set of class names; position is the class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    classes: Vec<String>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        if classes.len() < 2 {
            return Err(Error::InvalidLabelSpace(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, c) in classes.iter().enumerate() {
            if c.trim().is_empty() {
                return Err(Error::InvalidLabelSpace(format!("class {i} has an empty name")));
            }
            if let Some(prev) = seen.insert(c.as_str(), i) {
                return Err(Error::InvalidLabelSpace(format!(
                    "class `{c}` appears at indices {prev} and {i}"
                )));
            }
        }
        Ok(Self { classes })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Self::new(content_lines(&text).map(|(_, l)| l.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for c in &self.classes {
            out.push_str(c);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    TimeSeries,
    FeatureVector,
    ProbabilityVector,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::TimeSeries => "time-series",
            Modality::FeatureVector => "feature-vector",
            Modality::ProbabilityVector => "probability-vector",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time-series" => Ok(Modality::TimeSeries),
            "feature-vector" => Ok(Modality::FeatureVector),
            "probability-vector" => Ok(Modality::ProbabilityVector),
            other => Err(Error::InvalidConfig(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub values: Vec<f64>,
}

/// The unlabeled collection. All samples share the dataset's modality and
/// every invariant of that modality has been checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    modality: Modality,
    samples: Vec<Sample>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(modality: Modality, samples: Vec<Sample>) -> Result<Self> {
        let mut index = HashMap::with_capacity(samples.len());
        let mut width = None;
        for (i, s) in samples.iter().enumerate() {
            validate_sample(modality, s, &mut width)?;
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::sample(&s.id, "duplicate sample id"));
            }
        }
        Ok(Self {
            modality,
            samples,
            index,
        })
    }

    /// Reads a dataset file in the format implied by `modality`.
    pub fn load(path: impl AsRef<Path>, modality: Modality) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut samples = Vec::new();
        for (line_no, line) in content_lines(&text) {
            let (id, rest) = match modality {
                Modality::TimeSeries => line.split_once(',').ok_or_else(|| {
                    Error::parse(path, line_no, "expected `id,v1,...`")
                })?,
                _ => line.split_once('\t').ok_or_else(|| {
                    Error::parse(path, line_no, "expected `id<TAB>v1,v2,...`")
                })?,
            };
            let id = id.trim();
            if id.is_empty() {
                return Err(Error::parse(path, line_no, "empty sample id"));
            }
            let values = parse_values(rest)
                .map_err(|msg| Error::parse(path, line_no, format!("sample `{id}`: {msg}")))?;
            samples.push(Sample {
                id: id.to_string(),
                values,
            });
        }
        Self::new(modality, samples)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let sep = match self.modality {
            Modality::TimeSeries => ',',
            _ => '\t',
        };
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&s.id);
            out.push(sep);
            push_joined(&mut out, &s.values);
            out.push('\n');
        }
        out
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> &Sample {
        &self.samples[index]
    }

    pub fn id(&self, index: usize) -> &str {
        &self.samples[index].id
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

fn validate_sample(modality: Modality, s: &Sample, width: &mut Option<usize>) -> Result<()> {
    if s.id.is_empty() {
        return Err(Error::sample("", "empty sample id"));
    }
    if s.id.contains([',', '\t', '\n', '\r']) || s.id.trim() != s.id {
        return Err(Error::sample(&s.id, "ids may not contain commas, tabs, newlines or edge whitespace"));
    }
    if s.values.is_empty() {
        return Err(Error::sample(&s.id, "no values"));
    }
    if let Some(v) = s.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::sample(&s.id, format!("non-finite value {v}")));
    }
    match modality {
        Modality::TimeSeries => {}
        Modality::FeatureVector | Modality::ProbabilityVector => {
            let w = *width.get_or_insert(s.values.len());
            if s.values.len() != w {
                return Err(Error::sample(
                    &s.id,
                    format!("vector has length {} but dataset width is {w}", s.values.len()),
                ));
            }
        }
    }
    if modality == Modality::ProbabilityVector {
        if s.values.iter().any(|&v| v < 0.0) {
            return Err(Error::sample(&s.id, "negative probability"));
        }
        let sum: f64 = s.values.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::sample(&s.id, format!("not normalized (sum {sum})")));
        }
    }
    Ok(())
}

fn parse_values(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split(',')
        .map(|field| {
            let field = field.trim();
            if field.is_empty() {
                return Err("missing value".to_string());
            }
            let v: f64 = field
                .parse()
                .map_err(|_| format!("cannot parse `{field}` as a number"))?;
            if !v.is_finite() {
                return Err(format!("non-finite value `{field}`"));
            }
            Ok(v)
        })
        .collect()
}

pub(crate) fn push_joined(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v}").unwrap();
    }
}

/// Non-blank, non-comment lines with their 1-based line numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
}

/// Known class of (some) samples, keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    labels: BTreeMap<String, usize>,
}

impl GroundTruth {
    pub fn new(labels: BTreeMap<String, usize>) -> Self {
        Self { labels }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut labels = BTreeMap::new();
        for (line_no, line) in content_lines(&text) {
            let (id, class) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(path, line_no, "expected `id,class_index`"))?;
            let class: usize = class.trim().parse().map_err(|_| {
                Error::parse(path, line_no, format!("bad class index `{}`", class.trim()))
            })?;
            let id = id.trim().to_string();
            if labels.insert(id.clone(), class).is_some() {
                return Err(Error::parse(path, line_no, format!("duplicate id `{id}`")));
            }
        }
        Ok(Self { labels })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for (id, c) in &self.labels {
            writeln!(out, "{id},{c}").unwrap();
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Checks that every id exists in `ds` and every class is in range.
    pub fn validate(&self, ds: &Dataset, n_classes: usize) -> Result<()> {
        for (id, &c) in &self.labels {
            if ds.index_of(id).is_none() {
                return Err(Error::sample(id, "ground-truth id not in dataset"));
            }
            if c >= n_classes {
                return Err(Error::sample(
                    id,
                    format!("class index {c} out of range for {n_classes} classes"),
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.labels.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.labels.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Relabels into the binary problem `{rest = 0, class = 1}`.
    pub fn one_vs_rest(&self, class: usize) -> Self {
        Self {
            labels: self
                .labels
                .iter()
                .map(|(k, &v)| (k.clone(), usize::from(v == class)))
                .collect(),
        }
    }
}

/// Shape of a synthetic time-series class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesShape {
    /// Constant level.
    Flat,
    /// Level drops by `amplitude` at a jittered position near the middle.
    Step,
    /// Linear descent by `amplitude` over the whole window.
    Ramp,
    /// Sinusoid of height `amplitude` around the level.
    Oscillate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticClass {
    pub name: String,
    pub count: usize,
    /// Cluster center: feature vector, logits for probability vectors, or
    /// a single baseline level for time series.
    pub center: Vec<f64>,
    /// Standard deviation of the isotropic Gaussian noise.
    pub dispersion: f64,
    #[serde(default)]
    pub shape: Option<SeriesShape>,
    #[serde(default)]
    pub amplitude: f64,
}

/// Synthetic dataset description, read from TOML:
///
/// ```toml
/// modality = "feature-vector"
/// seed = 7
///
/// [[class]]
/// name = "low"
/// count = 100
/// center = [0.0]
/// dispersion = 0.5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub modality: Modality,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Time-series window length.
    #[serde(default)]
    pub length: Option<usize>,
    /// Maximum number of points randomly trimmed from the end of a series.
    #[serde(default)]
    pub length_jitter: usize,
    #[serde(rename = "class", default)]
    pub classes: Vec<SyntheticClass>,
}

impl SyntheticSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidSynthetic(e.to_string()))
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        LabelSpace::new(self.classes.iter().map(|c| c.name.clone()))
    }

    fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidSynthetic("zero classes".into()));
        }
        let dim = self.classes[0].center.len();
        for c in &self.classes {
            if !(c.dispersion > 0.0 && c.dispersion.is_finite()) {
                return Err(Error::InvalidSynthetic(format!(
                    "class `{}`: dispersion must be positive, got {}",
                    c.name, c.dispersion
                )));
            }
            if c.center.is_empty() || c.center.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSynthetic(format!(
                    "class `{}`: center must be non-empty and finite",
                    c.name
                )));
            }
            match self.modality {
                Modality::TimeSeries => {
                    if c.center.len() != 1 {
                        return Err(Error::InvalidSynthetic(format!(
                            "class `{}`: time-series center is a single level",
                            c.name
                        )));
                    }
                }
                _ => {
                    if c.center.len() != dim {
                        return Err(Error::InvalidSynthetic(format!(
                            "class `{}`: center has length {} but expected {dim}",
                            c.name,
                            c.center.len()
                        )));
                    }
                }
            }
        }
        if self.modality == Modality::TimeSeries {
            let len = self.length.unwrap_or(0);
            if len < 2 || self.length_jitter >= len {
                return Err(Error::InvalidSynthetic(
                    "time series need length >= 2 and length_jitter < length".into(),
                ));
            }
        }
        if self.classes.iter().map(|c| c.count).sum::<usize>() == 0 {
            return Err(Error::InvalidSynthetic("no samples requested".into()));
        }
        Ok(())
    }
}

/// Draws a dataset and its exact ground truth. Output is a pure function of
/// `(spec, seed)`; sample order is shuffled so classes are interleaved.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn: Vec<(Vec<f64>, usize)> = Vec::new();
    for (class, c) in spec.classes.iter().enumerate() {
        let noise = Normal::new(0.0, c.dispersion)
            .map_err(|e| Error::InvalidSynthetic(e.to_string()))?;
        for _ in 0..c.count {
            let values = match spec.modality {
                Modality::FeatureVector => {
                    c.center.iter().map(|m| m + noise.sample(&mut rng)).collect()
                }
                Modality::ProbabilityVector => {
                    let logits: Vec<f64> =
                        c.center.iter().map(|m| m + noise.sample(&mut rng)).collect();
                    softmax(&logits)
                }
                Modality::TimeSeries => synth_series(spec, c, &noise, &mut rng),
            };
            drawn.push((values, class));
        }
    }
    drawn.shuffle(&mut rng);
    let width = (drawn.len().max(1) - 1).to_string().len();
    let mut samples = Vec::with_capacity(drawn.len());
    let mut labels = BTreeMap::new();
    for (i, (values, class)) in drawn.into_iter().enumerate() {
        let id = format!("s{i:0width$}");
        labels.insert(id.clone(), class);
        samples.push(Sample { id, values });
    }
    Ok((Dataset::new(spec.modality, samples)?, GroundTruth::new(labels)))
}

fn synth_series(
    spec: &SyntheticSpec,
    c: &SyntheticClass,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    use rand::Rng;
    let full = spec.length.unwrap_or(2);
    let len = full - rng.random_range(0..=spec.length_jitter);
    let level = c.center[0];
    let shape = c.shape.unwrap_or(SeriesShape::Flat);
    // step position jittered within the middle half of the window
    let step_at = rng.random_range(full / 4..=(3 * full / 4).max(full / 4));
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    (0..len)
        .map(|k| {
            let base = match shape {
                SeriesShape::Flat => level,
                SeriesShape::Step => {
                    if k >= step_at {
                        level - c.amplitude
                    } else {
                        level
                    }
                }
                SeriesShape::Ramp => level - c.amplitude * k as f64 / (full - 1) as f64,
                SeriesShape::Oscillate => {
                    level + c.amplitude * (phase + k as f64 * std::f64::consts::TAU / 12.0).sin()
                }
            };
            base + noise.sample(rng)
        })
        .collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}
