mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use memlabel::labeling::SessionStatus;
use memlabel::service::{serve_session, PendingQuery, ServiceHandle, ServiceProvider, SharedSession};
use memlabel::{
    build_distance_matrix, generate_synthetic, run_pipeline, Budget, Dataset, DistanceFunction, LabelQuery,
    LabelSession, LabelSpace, MemoryGenConfig, Modality, OracleProvider, Sample,
};
use serde_json::Value;

use common::http;

fn dataset(n: usize) -> Arc<Dataset> {
    let samples = (0..n)
        .map(|i| Sample {
            id: format!("x{i}"),
            values: vec![i as f64, 0.5, -1.0],
        })
        .collect();
    Arc::new(Dataset::new(Modality::TimeSeries, samples).unwrap())
}

fn space() -> LabelSpace {
    LabelSpace::new(["normal", "alarm"]).unwrap()
}

fn start(n_queries: usize, limit: usize) -> (Arc<SharedSession>, ServiceHandle) {
    let ds = dataset(n_queries);
    let shared = SharedSession::new(LabelSession::in_memory("t", space(), limit));
    let queries: Vec<LabelQuery> = (0..n_queries).map(|i| LabelQuery::new(1, i, ds.id(i))).collect();
    shared.lock().register(&queries).unwrap();
    let handle = serve_session(shared.clone(), ds, None, "127.0.0.1:0".parse().unwrap()).unwrap();
    (shared, handle)
}

fn post(h: &ServiceHandle, query: &str, class: usize) -> (u16, String) {
    let body = format!(r#"{{"query_id":"{query}","class_index":{class}}}"#);
    http(h.local_addr(), "POST", "/labels", Some(&body))
}

fn json(body: &str) -> Value {
    serde_json::from_str(body).unwrap()
}

#[test]
fn session_and_pending_listing() {
    let (_s, h) = start(3, 10);
    let (status, body) = http(h.local_addr(), "GET", "/session", None);
    assert_eq!(status, 200);
    let v = json(&body);
    assert_eq!(v["id"], "t");
    assert_eq!(v["label_space"], serde_json::json!(["normal", "alarm"]));
    assert_eq!(v["budget"]["N_L"], 10);
    assert_eq!(v["budget"]["consumed"], 0);
    assert_eq!(v["status"], "open");

    let (_, body) = http(h.local_addr(), "GET", "/queries/pending?limit=2", None);
    let list: Vec<PendingQuery> = serde_json::from_str(&body).unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!(list[0].sample_id, "x0");
    assert_eq!(list[0].preview_url, "/samples/x0/preview");
    assert_eq!(list[1].seed, 1);
}

#[test]
fn accepts_then_rejects_duplicates() {
    let (s, h) = start(3, 10);
    let (status, body) = post(&h, "s1-0", 1);
    assert_eq!(status, 200);
    assert_eq!(json(&body), serde_json::json!({"accepted": true, "consumed": 1}));
    assert_eq!(post(&h, "s1-0", 1).0, 409);
    assert_eq!(post(&h, "s1-0", 0).0, 409);
    assert_eq!(s.lock().consumed(), 1);
    assert_eq!(s.lock().answer("s1-0"), Some(1));
}

#[test]
fn status_codes_for_bad_submissions() {
    let (s, h) = start(4, 3);
    assert_eq!(post(&h, "nope", 0).0, 404);
    assert_eq!(post(&h, "s1-0", 2).0, 422);
    for q in ["s1-0", "s1-1", "s1-2"] {
        assert_eq!(post(&h, q, 0).0, 200);
    }
    // budget of 3 is spent
    assert_eq!(post(&h, "s1-3", 0).0, 409);
    s.abort();
    assert_eq!(post(&h, "s1-3", 0).0, 409);
    let (_, body) = http(h.local_addr(), "GET", "/progress", None);
    assert_eq!(json(&body)["status"], "aborted");
}

#[test]
fn concurrent_duplicates_accept_once() {
    let (s, h) = start(6, 6);
    let addr = h.local_addr();
    let replies: Vec<u16> = (0..8)
        .map(|_| {
            thread::spawn(move || {
                let body = r#"{"query_id":"s1-2","class_index":1}"#;
                http(addr, "POST", "/labels", Some(body)).0
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .map(|t| t.join().unwrap())
        .collect();
    assert_eq!(replies.iter().filter(|&&c| c == 200).count(), 1);
    assert_eq!(replies.iter().filter(|&&c| c == 409).count(), 7);
    assert_eq!(s.lock().consumed(), 1);
}

#[test]
fn progress_reaches_complete() {
    let (_s, h) = start(6, 6);
    for i in 0..6 {
        assert_eq!(post(&h, &format!("s1-{i}"), i % 2).0, 200);
    }
    let (_, body) = http(h.local_addr(), "GET", "/progress", None);
    let v = json(&body);
    assert_eq!(v["total_queries"], 6);
    assert_eq!(v["answered"], 6);
    assert_eq!(v["per_seed_counts"]["1"]["answered"], 6);
    assert_eq!(v["status"], "complete");
    let (_, body) = http(h.local_addr(), "GET", "/queries/pending", None);
    assert_eq!(json(&body), serde_json::json!([]));
}

#[test]
fn journal_holds_each_label_once() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.journal");
    let ds = dataset(6);
    let shared = SharedSession::new(LabelSession::open(&path, "ui", space(), 6).unwrap());
    let queries: Vec<LabelQuery> = (0..6).map(|i| LabelQuery::new(4, i, ds.id(i))).collect();
    shared.lock().register(&queries).unwrap();
    let h = serve_session(shared.clone(), ds, None, "127.0.0.1:0".parse().unwrap()).unwrap();
    for q in &queries {
        assert_eq!(post(&h, &q.query_id, 1).0, 200);
        assert_eq!(post(&h, &q.query_id, 1).0, 409);
    }
    h.shutdown();
    let text = std::fs::read_to_string(&path).unwrap();
    let entries: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(entries.len(), 6);
    let ids: BTreeSet<&str> = entries.iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids.len(), 6);
    assert_eq!(shared.lock().status(), SessionStatus::Complete);
}

#[test]
fn previews_fall_back_to_values() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x1.png"), b"\x89PNG fake").unwrap();
    let ds = dataset(3);
    let shared = SharedSession::new(LabelSession::in_memory("p", space(), 3));
    let h = serve_session(shared, ds, Some(dir.path().to_path_buf()), "127.0.0.1:0".parse().unwrap()).unwrap();
    let (status, body) = http(h.local_addr(), "GET", "/samples/x0/preview", None);
    assert_eq!(status, 200);
    assert_eq!(json(&body), serde_json::json!([0.0, 0.5, -1.0]));
    let (status, body) = http(h.local_addr(), "GET", "/samples/x1/preview", None);
    assert_eq!(status, 200);
    assert!(body.contains("PNG fake"));
    assert_eq!(http(h.local_addr(), "GET", "/samples/zzz/preview", None).0, 404);
}

#[test]
fn service_mode_matches_oracle_mode() {
    let spec = common::two_class_series([30, 20], 0.3);
    let (ds, gt) = generate_synthetic(&spec, 2).unwrap();
    let m = build_distance_matrix(&ds, &DistanceFunction::dtw()).unwrap();
    let cfg = MemoryGenConfig::new(8.0, 0);
    let seeds = [1, 2, 3];

    let expected = run_pipeline(&ds, &m, &cfg, &seeds, Budget::new(60), 2, &mut OracleProvider::new(gt.clone())).unwrap();

    let ds = Arc::new(ds);
    let shared = SharedSession::new(LabelSession::in_memory("eq", spec.label_space().unwrap(), 60));
    let h = serve_session(shared.clone(), ds.clone(), None, "127.0.0.1:0".parse().unwrap()).unwrap();
    let worker = {
        let (ds, shared) = (ds.clone(), shared.clone());
        thread::spawn(move || {
            run_pipeline(&ds, &m, &cfg, &seeds, Budget::new(60), 2, &mut ServiceProvider::new(shared)).unwrap()
        })
    };
    while !worker.is_finished() {
        let (_, body) = http(h.local_addr(), "GET", "/queries/pending", None);
        let list: Vec<PendingQuery> = serde_json::from_str(&body).unwrap();
        for q in list {
            assert_eq!(post(&h, &q.query_id, gt.get(&q.sample_id).unwrap()).0, 200);
        }
        thread::sleep(Duration::from_millis(5));
    }
    let got = worker.join().unwrap();
    assert_eq!(got.matrix.to_text(), expected.matrix.to_text());
    assert_eq!(got.budget, expected.budget);
}
