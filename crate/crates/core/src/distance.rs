//! Per-modality distance functions and the cached pairwise matrix.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{content_lines, Dataset, Modality, PROBABILITY_SUM_TOL};
use crate::error::{Error, Result};

pub const DEFAULT_KL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    Dtw,
    Euclidean,
    SymmetricKl,
}

impl DistanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::Dtw => "dtw",
            DistanceKind::Euclidean => "euclidean",
            DistanceKind::SymmetricKl => "symmetric-kl",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            DistanceKind::Dtw => Modality::TimeSeries,
            DistanceKind::Euclidean => Modality::FeatureVector,
            DistanceKind::SymmetricKl => Modality::ProbabilityVector,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceFunction {
    pub kind: DistanceKind,
    /// Additive smoothing, used by `SymmetricKl` only.
    pub eps: f64,
}

impl DistanceFunction {
    pub fn dtw() -> Self {
        Self {
            kind: DistanceKind::Dtw,
            eps: DEFAULT_KL_EPS,
        }
    }

    pub fn euclidean() -> Self {
        Self {
            kind: DistanceKind::Euclidean,
            eps: DEFAULT_KL_EPS,
        }
    }

    pub fn symmetric_kl(eps: f64) -> Self {
        Self {
            kind: DistanceKind::SymmetricKl,
            eps,
        }
    }

    /// The natural distance for a modality.
    pub fn for_modality(modality: Modality) -> Self {
        match modality {
            Modality::TimeSeries => Self::dtw(),
            Modality::FeatureVector => Self::euclidean(),
            Modality::ProbabilityVector => Self::symmetric_kl(DEFAULT_KL_EPS),
        }
    }

    pub fn check_modality(&self, modality: Modality) -> Result<()> {
        if self.kind.modality() != modality {
            return Err(Error::ModalityMismatch {
                kind: self.kind.as_str(),
                modality: modality.as_str(),
            });
        }
        if self.kind == DistanceKind::SymmetricKl && !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "symmetric-kl smoothing must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self.kind {
            DistanceKind::Dtw => dtw_distance(a, b),
            DistanceKind::Euclidean => euclidean_distance(a, b),
            DistanceKind::SymmetricKl => symmetric_kl_distance(a, b, self.eps),
        }
    }
}

/// Unconstrained dynamic time warping with local cost `|a_i - b_j|` and no
/// path-length normalization.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("dtw series"));
    }
    // two rolling rows over b; prev[j] holds D(i-1, j)
    let mut prev = vec![f64::INFINITY; b.len() + 1];
    let mut cur = vec![f64::INFINITY; b.len() + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for (j, &y) in b.iter().enumerate() {
            let best = prev[j].min(prev[j + 1]).min(cur[j]);
            cur[j + 1] = (x - y).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[b.len()])
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// `½·KL(p‖q) + ½·KL(q‖p)` in nats after smoothing both inputs with `eps`.
pub fn symmetric_kl_distance(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    if p.is_empty() {
        return Err(Error::Empty("probability vector"));
    }
    let p = smooth(p, eps)?;
    let q = smooth(q, eps)?;
    let kl = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().zip(y).map(|(a, b)| a * (a / b).ln()).sum()
    };
    // clamp tiny negative rounding; exact zero on identical inputs
    Ok((0.5 * kl(&p, &q) + 0.5 * kl(&q, &p)).max(0.0))
}

fn smooth(p: &[f64], eps: f64) -> Result<Vec<f64>> {
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidProbability(format!("entry {v} is not a finite non-negative number")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
        return Err(Error::InvalidProbability(format!("entries sum to {sum}")));
    }
    let total = sum + eps * p.len() as f64;
    Ok(p.iter().map(|v| (v + eps) / total).collect())
}

/// Symmetric pairwise distances with an implicit zero diagonal; stores only
/// the strict upper triangle in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    upper: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds from a pair function evaluated on `i < j`.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut upper = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(f(i, j));
            }
        }
        Self::from_upper(n, upper)
    }

    fn from_upper(n: usize, upper: Vec<f64>) -> Result<Self> {
        debug_assert_eq!(upper.len(), n * n.saturating_sub(1) / 2);
        if let Some(v) = upper.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "distance entries must be finite and non-negative, got {v}"
            )));
        }
        Ok(Self { n, upper })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        // i < j
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.n && j < self.n, "index out of range");
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.upper[self.offset(i, j)],
            std::cmp::Ordering::Greater => self.upper[self.offset(j, i)],
        }
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        self.upper.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest off-diagonal distance, `None` for fewer than two samples.
    pub fn min_off_diagonal(&self) -> Option<f64> {
        self.upper.iter().copied().reduce(f64::min)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = format!("n={}\n", self.n);
        for i in 0..self.n {
            for j in i + 1..self.n {
                writeln!(out, "{i},{j},{}", self.get(i, j)).unwrap();
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Reads a cache file; every `i<j` pair must appear exactly once.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut lines = content_lines(&text);
        let (line_no, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing `n=<N>` header"))?;
        let n: usize = header
            .strip_prefix("n=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::parse(path, line_no, "expected `n=<N>` header"))?;
        let total = n * n.saturating_sub(1) / 2;
        let mut upper = vec![f64::NAN; total];
        let mut filled = 0usize;
        let tmp = Self { n, upper: Vec::new() };
        for (line_no, line) in lines {
            let mut parts = line.split(',');
            let (Some(i), Some(j), Some(v), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::parse(path, line_no, "expected `i,j,value`"));
            };
            let bad = |what: &str| Error::parse(path, line_no, format!("bad {what}"));
            let i: usize = i.trim().parse().map_err(|_| bad("row index"))?;
            let j: usize = j.trim().parse().map_err(|_| bad("column index"))?;
            let v: f64 = v.trim().parse().map_err(|_| bad("value"))?;
            if !(i < j && j < n) {
                return Err(Error::parse(path, line_no, format!("pair ({i},{j}) is not i<j<{n}")));
            }
            let slot = &mut upper[tmp.offset(i, j)];
            if !slot.is_nan() {
                return Err(Error::parse(path, line_no, format!("pair ({i},{j}) repeated")));
            }
            *slot = v;
            filled += 1;
        }
        if filled != total {
            return Err(Error::parse(
                path,
                0,
                format!("incomplete matrix: {filled} of {total} pairs"),
            ));
        }
        Self::from_upper(n, upper)
    }
}

/// Computes all pairwise distances of `ds` under `f`, rows in parallel.
pub fn build_distance_matrix(ds: &Dataset, f: &DistanceFunction) -> Result<DistanceMatrix> {
    f.check_modality(ds.modality())?;
    let n = ds.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = &ds.sample(i).values;
            (i + 1..n)
                .map(|j| f.eval(a, &ds.sample(j).values))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    DistanceMatrix::from_upper(n, rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Minimum over every monotone warping path, by recursion.
    fn dtw_enumerate(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
            let here = (a[i] - b[j]).abs();
            if i + 1 == a.len() && j + 1 == b.len() {
                return here;
            }
            let mut best = f64::INFINITY;
            if i + 1 < a.len() {
                best = best.min(go(a, b, i + 1, j));
            }
            if j + 1 < b.len() {
                best = best.min(go(a, b, i, j + 1));
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                best = best.min(go(a, b, i + 1, j + 1));
            }
            here + best
        }
        go(a, b, 0, 0)
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw_distance(&[3., 1., 4.], &[3., 1., 4.]).unwrap(), 0.0);
        assert_eq!(dtw_enumerate(&[0., 1.], &[0., 1., 1.]), 0.0);
        assert_eq!(dtw_distance(&[0., 1.], &[0., 1., 1.]).unwrap(), 0.0);
        assert!(dtw_distance(&[], &[1.0]).is_err());
        assert_eq!(dtw_distance(&[1.0], &[4.0, 6.0]).unwrap(), 8.0);
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean_distance(&[0., 0.], &[3., 4.]).unwrap(), 5.0);
        assert_eq!(euclidean_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert!(matches!(
            euclidean_distance(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn symmetric_kl_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(symmetric_kl_distance(&p, &p, 1e-9).unwrap(), 0.0);

        // closed form for the unsmoothed pair; smoothing at 1e-9 moves it < 1e-8
        let ln = f64::ln;
        let forward = 0.5 * ln(0.5 / 0.25) + 0.5 * ln(0.5 / 0.75);
        let backward = 0.25 * ln(0.25 / 0.5) + 0.75 * ln(0.75 / 0.5);
        let expected = 0.5 * forward + 0.5 * backward;
        assert_relative_eq!(expected, 0.137_326, epsilon = 1e-6);
        let got = symmetric_kl_distance(&[0.5, 0.5], &[0.25, 0.75], 1e-9).unwrap();
        assert!((got - expected).abs() < 1e-4);

        let far = symmetric_kl_distance(&[1.0, 0.0], &[0.0, 1.0], 1e-9).unwrap();
        assert!(far.is_finite() && far > 10.0);

        assert!(symmetric_kl_distance(&[1.2, -0.2], &[0.5, 0.5], 1e-9).is_err());
        assert!(symmetric_kl_distance(&[0.5, 0.5], &[1.0], 1e-9).is_err());
    }

    #[test]
    fn matrix_from_features() {
        let ds = Dataset::new(
            Modality::FeatureVector,
            [0.0, 1.0, 10.0]
                .iter()
                .enumerate()
                .map(|(i, v)| Sample { id: format!("p{i}"), values: vec![*v] })
                .collect(),
        )
        .unwrap();
        let m = build_distance_matrix(&ds, &DistanceFunction::euclidean()).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 2), 10.0);
        assert_eq!(m.get(1, 2), 9.0);
        assert_eq!(m.get(2, 1), 9.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert!(matches!(
            build_distance_matrix(&ds, &DistanceFunction::dtw()),
            Err(Error::ModalityMismatch { .. })
        ));
    }

    #[test]
    fn cache_file_round_trip_and_completeness() {
        let dir = tempfile::tempdir().unwrap();
        let m = DistanceMatrix::from_fn(5, |i, j| (i * 7 + j) as f64 / 3.0).unwrap();
        let p = dir.path().join("d.txt");
        m.write(&p).unwrap();
        assert_eq!(DistanceMatrix::load(&p).unwrap(), m);

        let text = fs::read_to_string(&p).unwrap();
        let truncated: Vec<&str> = text.lines().take(5).collect();
        fs::write(&p, truncated.join("\n")).unwrap();
        assert!(DistanceMatrix::load(&p).unwrap_err().to_string().contains("incomplete"));

        fs::write(&p, "n=3\n0,1,1\n0,1,1\n0,2,1\n").unwrap();
        assert!(DistanceMatrix::load(&p).unwrap_err().to_string().contains("repeated"));
    }

    proptest! {
        #[test]
        fn dtw_matches_path_enumeration(
            a in prop::collection::vec(-3i32..=3, 1..=5),
            b in prop::collection::vec(-3i32..=3, 1..=5),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            prop_assert_eq!(dtw_distance(&a, &b).unwrap(), dtw_enumerate(&a, &b));
        }

        #[test]
        fn dtw_symmetric_and_below_diagonal_path(
            pair in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..40),
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pair.into_iter().unzip();
            let ab = dtw_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, dtw_distance(&b, &a).unwrap());
            let diagonal: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            prop_assert!(ab >= 0.0 && ab <= diagonal + 1e-9);
        }

        #[test]
        fn symmetric_kl_is_symmetric(
            p in prop::collection::vec(0.0f64..1.0, 2..8),
            q in prop::collection::vec(0.0f64..1.0, 2..8),
        ) {
            let k = p.len().min(q.len());
            let norm = |v: &[f64]| {
                let s: f64 = v.iter().sum::<f64>() + 1e-12;
                v.iter().map(|x| (x + 1e-12 / v.len() as f64) / s).collect::<Vec<_>>()
            };
            let (p, q) = (norm(&p[..k]), norm(&q[..k]));
            let pq = symmetric_kl_distance(&p, &q, 1e-9).unwrap();
            prop_assert_eq!(pq, symmetric_kl_distance(&q, &p, 1e-9).unwrap());
            prop_assert!(pq >= 0.0);
        }
    }
}
