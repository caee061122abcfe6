#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};

use memlabel::weak_label::WeakLabelMatrix;
use memlabel::{compute_cost, Dataset, DistanceMatrix, GroundTruth, Modality, Sample, SyntheticSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Minimal HTTP/1.1 client; returns status and body.
pub fn http(addr: SocketAddr, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
    let mut s = TcpStream::connect(addr).expect("connect");
    let body = body.unwrap_or("");
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).unwrap();
    let raw = String::from_utf8_lossy(&raw).into_owned();
    let (head, rest) = raw.split_once("\r\n\r\n").expect("http reply");
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        dechunk(rest)
    } else {
        rest.to_string()
    };
    (status, body)
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (len, rest) = s.split_once("\r\n").unwrap();
        let n = usize::from_str_radix(len.trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
}

/// Two series classes: flat noise and an oscillation.
pub fn two_class_series(per_class: [usize; 2], dispersion: f64) -> SyntheticSpec {
    SyntheticSpec::from_toml(&format!(
        r#"
modality = "time-series"
length = 20
length_jitter = 3

[[class]]
name = "steady"
count = {}
center = [0.0]
dispersion = {dispersion}
shape = "flat"

[[class]]
name = "oscillating"
count = {}
center = [0.0]
dispersion = {dispersion}
shape = "oscillate"
amplitude = 2.0
"#,
        per_class[0], per_class[1]
    ))
    .unwrap()
}

/// Well-separated feature-vector blobs on a circle.
pub fn blobs(counts: &[usize], radius: f64, dispersion: f64) -> SyntheticSpec {
    let mut text = String::from("modality = \"feature-vector\"\n");
    for (k, n) in counts.iter().enumerate() {
        let a = std::f64::consts::TAU * k as f64 / counts.len() as f64;
        text.push_str(&format!(
            "\n[[class]]\nname = \"c{k}\"\ncount = {n}\ncenter = [{}, {}]\ndispersion = {dispersion}\n",
            radius * a.cos(),
            radius * a.sin()
        ));
    }
    SyntheticSpec::from_toml(&text).unwrap()
}

pub fn points(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> Dataset {
    let samples = (0..n)
        .map(|i| Sample {
            id: format!("p{i}"),
            values: (0..dim).map(|_| rng.random_range(0.0..scale)).collect(),
        })
        .collect();
    Dataset::new(Modality::FeatureVector, samples).unwrap()
}

pub fn euclidean_matrix(ds: &Dataset) -> DistanceMatrix {
    memlabel::build_distance_matrix(ds, &memlabel::DistanceFunction::euclidean()).unwrap()
}

/// Lowest medoid cost over all `r`-subsets.
pub fn brute_force_optimum(m: &DistanceMatrix, r: usize) -> f64 {
    fn rec(m: &DistanceMatrix, start: usize, r: usize, chosen: &mut Vec<usize>, best: &mut f64) {
        if chosen.len() == r {
            *best = best.min(compute_cost(m, chosen).unwrap());
            return;
        }
        for i in start..m.len() {
            chosen.push(i);
            rec(m, i + 1, r, chosen, best);
            chosen.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(m, 0, r, &mut Vec::new(), &mut best);
    best
}

/// Votes from conditionally independent functions with symmetric accuracies.
pub fn simulate_votes(
    accuracies: &[f64],
    prior: &[f64],
    n: usize,
    seed: u64,
) -> (WeakLabelMatrix, Vec<usize>) {
    let c = prior.len();
    let mut r = rng(seed);
    let mut truth = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = r.random();
        let mut acc = 0.0;
        let y = prior
            .iter()
            .position(|p| {
                acc += p;
                u < acc
            })
            .unwrap_or(c - 1);
        truth.push(y);
        rows.push(
            accuracies
                .iter()
                .map(|&a| {
                    if r.random_bool(a) {
                        Some(y)
                    } else {
                        let other = r.random_range(0..c - 1);
                        Some(if other >= y { other + 1 } else { other })
                    }
                })
                .collect(),
        );
    }
    let ids = (0..n).map(|i| format!("x{i}")).collect();
    let names = (0..accuracies.len()).map(|k| format!("lf{k}")).collect();
    (WeakLabelMatrix::from_rows(ids, names, rows).unwrap(), truth)
}

pub fn hard_accuracy(labels: &[usize], truth: &[usize]) -> f64 {
    labels.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

pub fn gt_accuracy(labels: &memlabel::ProbabilisticLabels, gt: &GroundTruth) -> f64 {
    let hits = (0..labels.len())
        .filter(|&i| gt.get(&labels.sample_ids()[i]) == Some(labels.hard_label(i)))
        .count();
    hits as f64 / labels.len() as f64
}
