mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use memlabel::cli::{cmd_aggregate, cmd_aggregate_matrix, cmd_memories, cmd_partition, cmd_run, cmd_score, AggregateSection, RunConfig};
use memlabel::{generate_synthetic, GroundTruth, LabelSpace};

const CONFIG: &str = r#"
output = "out"

[dataset]
path = "series.csv"
modality = "time-series"
label_space = "classes.txt"
ground_truth = "truth.csv"

[distance]
kind = "dtw"

[memory]
threshold = 8.0
seeds = [5, 6, 7]

[budget]
max_labels = 50

[provider]
mode = "oracle"
flip_rate = 0.1
flip_seed = 2

[aggregate]
method = "both"
"#;

fn setup(dir: &Path, config: &str) -> RunConfig {
    let spec = common::two_class_series([35, 25], 0.3);
    let (ds, gt) = generate_synthetic(&spec, 21).unwrap();
    ds.write(dir.join("series.csv")).unwrap();
    gt.write(dir.join("truth.csv")).unwrap();
    spec.label_space().unwrap().write(dir.join("classes.txt")).unwrap();
    fs::write(dir.join("run.toml"), config).unwrap();
    RunConfig::load(dir.join("run.toml")).unwrap()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e != "journal"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn run_writes_full_artifact_set() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), CONFIG);
    let mut log = Vec::new();
    cmd_run(&cfg, &mut log).unwrap();
    let names: Vec<String> = snapshot(&cfg.output).into_iter().map(|(n, _)| n).collect();
    for expected in [
        "manifest.json",
        "memories_seed_5.txt",
        "partition_seed_5.csv",
        "weak_labels.csv",
        "labels_majority.csv",
        "labels_label_model.csv",
        "label_model_params.txt",
        "report_majority.txt",
        "report_label_model.csv",
    ] {
        assert!(names.iter().any(|n| n == expected), "missing {expected} in {names:?}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(cfg.output.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["memory"]["seeds"], serde_json::json!([5, 6, 7]));
    let listed: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for name in names.iter().filter(|n| *n != "manifest.json") {
        assert!(listed.contains(&name.as_str()), "{name} not in manifest");
    }
}

#[test]
fn staged_commands_compose_to_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), CONFIG);
    let mut log = Vec::new();
    cmd_memories(&cfg, &mut log).unwrap();
    cmd_partition(&cfg, &mut log).unwrap();
    cmd_aggregate(&cfg, &mut log).unwrap();
    let staged = snapshot(&cfg.output);
    fs::remove_dir_all(&cfg.output).unwrap();
    cmd_run(&cfg, &mut log).unwrap();
    let run = snapshot(&cfg.output);
    assert_eq!(staged.len(), run.len());
    for ((a, x), (b, y)) in staged.iter().zip(&run) {
        assert_eq!(a, b);
        assert!(x == y, "{a} differs between staged and monolithic runs");
    }
}

#[test]
fn later_stage_needs_earlier_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), CONFIG);
    let err = cmd_partition(&cfg, &mut Vec::new()).unwrap_err().to_string();
    assert!(err.contains("missing stage file"), "{err}");
    cmd_memories(&cfg, &mut Vec::new()).unwrap();
    let mut other = cfg.clone();
    other.memory.threshold = 9.0;
    assert!(cmd_partition(&other, &mut Vec::new()).is_err());
}

#[test]
fn mismatched_distance_fails_before_compute() {
    let bad = CONFIG.replace("kind = \"dtw\"", "kind = \"euclidean\"");
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), &bad).unwrap();
    // no dataset files exist: the error must come from validation alone
    let err = RunConfig::load(tmp.path().join("run.toml")).unwrap_err();
    assert!(err.to_string().contains("euclidean"), "{err}");

    let out = Command::new(env!("CARGO_BIN_EXE_memlabel"))
        .args(["run", "--config"])
        .arg(tmp.path().join("run.toml"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("[config]"), "{stderr}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn duplicate_seeds_are_rejected() {
    let bad = CONFIG.replace("seeds = [5, 6, 7]", "seeds = [5, 6, 5]");
    assert!(RunConfig::from_toml(&bad).unwrap().validate().is_err());
}

#[test]
fn binary_is_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path(), CONFIG);
    for (threads, out) in [("1", "a"), ("4", "b")] {
        let run = Command::new(env!("CARGO_BIN_EXE_memlabel"))
            .args(["run", "--threads", threads, "--out"])
            .arg(tmp.path().join(out))
            .arg("--config")
            .arg(tmp.path().join("run.toml"))
            .output()
            .unwrap();
        assert!(run.status.success());
    }
    for f in ["weak_labels.csv", "labels_majority.csv", "labels_label_model.csv", "memories_seed_6.txt"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_override_replaces_config_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path(), CONFIG);
    let run = Command::new(env!("CARGO_BIN_EXE_memlabel"))
        .args(["memories", "--seed-override", "11,12", "--config"])
        .arg(tmp.path().join("run.toml"))
        .output()
        .unwrap();
    assert!(run.status.success());
    assert!(tmp.path().join("out/memories_seed_11.txt").exists());
    assert!(tmp.path().join("out/memories_seed_12.txt").exists());
    assert!(!tmp.path().join("out/memories_seed_5.txt").exists());
}

#[test]
fn aggregate_imported_matrix_with_abstains() {
    let tmp = tempfile::tempdir().unwrap();
    let matrix = tmp.path().join("external.csv");
    fs::write(&matrix, "sample_id,heuristic_a,heuristic_b,seed_3\na,1,1,-1\nb,0,-1,-1\nc,-1,-1,-1\nd,1,0,0\n").unwrap();
    let space = LabelSpace::new(["neg", "pos"]).unwrap();
    let out = tmp.path().join("agg");
    cmd_aggregate_matrix(&AggregateSection::default(), &matrix, &space, None, &out, &mut Vec::new()).unwrap();

    // counts of non-abstaining votes, ties to the lower class
    let mv = fs::read_to_string(out.join("labels_majority.csv")).unwrap();
    let rows: Vec<Vec<&str>> = mv.lines().map(|l| l.split(',').collect()).collect();
    let expect = [("a", 0.0, 1), ("b", 1.0, 0), ("c", 0.5, 0), ("d", 2.0 / 3.0, 0)];
    for (row, (id, p0, hard)) in rows.iter().zip(expect) {
        assert_eq!(row[0], id);
        let got: f64 = row[1].parse().unwrap();
        assert!((got - p0).abs() < 1e-12, "{id}: {got}");
        let p1: f64 = row[2].parse().unwrap();
        assert!((got + p1 - 1.0).abs() < 1e-12);
        assert_eq!(row[3].parse::<usize>().unwrap(), hard);
    }

    let lm = memlabel::ProbabilisticLabels::load(out.join("labels_label_model.csv")).unwrap();
    assert_eq!(lm.len(), 4);
    let params = fs::read_to_string(out.join("label_model_params.txt")).unwrap();
    assert!(params.contains("heuristic_a") && params.contains("seed_3"));

    // Bayes by hand from the printed parameters (6 decimals)
    let nums = |l: &str| -> Vec<f64> { l.split_whitespace().filter_map(|t| t.parse().ok()).collect() };
    let lines: Vec<&str> = params.lines().collect();
    let prior = nums(lines.iter().find(|l| l.starts_with("prior")).unwrap());
    let mut confusion = Vec::new();
    for (i, l) in lines.iter().enumerate() {
        if l.starts_with("function") {
            // header row, then one row per true class: class index + 3 cells
            confusion.push((0..2).map(|y| nums(lines[i + 2 + y])[1..].to_vec()).collect::<Vec<_>>());
        }
    }
    assert_eq!(confusion.len(), 3);
    let votes = [[1, 1, 2], [0, 2, 2], [2, 2, 2], [1, 0, 0]];
    for (i, row) in votes.iter().enumerate() {
        let joint: Vec<f64> = (0..2)
            .map(|y| prior[y] * row.iter().enumerate().map(|(k, &v)| confusion[k][y][v]).product::<f64>())
            .collect();
        let p0 = joint[0] / (joint[0] + joint[1]);
        assert!((lm.distribution(i)[0] - p0).abs() < 1e-4, "row {i}: {} vs {p0}", lm.distribution(i)[0]);
    }
}

#[test]
fn score_reads_prediction_files() {
    let tmp = tempfile::tempdir().unwrap();
    let pred = tmp.path().join("pred.csv");
    fs::write(&pred, "a,0.9,0.1,0,0.9\nb,0.2,0.8,1,0.8\nc,0.6,0.4,0,0.6\nd,0.3,0.7,1,0.7\n").unwrap();
    let gt = GroundTruth::new([("a", 0), ("b", 1), ("c", 1), ("d", 1)].iter().map(|(k, v)| (k.to_string(), *v)).collect());
    let space = LabelSpace::new(["neg", "pos"]).unwrap();
    let table = cmd_score(&pred, &gt, &space, None, Some(tmp.path())).unwrap();
    assert!(table.contains("accuracy    0.7500"), "{table}");
    // positive class 1: tp 2, fp 0, fn 1
    assert!(table.contains("f1          0.8000"), "{table}");
    assert!(tmp.path().join("report.csv").exists());
}

#[test]
fn synth_then_run_through_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/rhythms.toml");
    let run = Command::new(env!("CARGO_BIN_EXE_memlabel"))
        .args(["synth", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(run.status.success());
    let config = CONFIG
        .replace("series.csv", "dataset.csv")
        .replace("truth.csv", "ground_truth.csv");
    fs::write(tmp.path().join("run.toml"), config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_memlabel"))
        .args(["run", "--config"])
        .arg(tmp.path().join("run.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("out/report_majority.txt").exists());
}
