//! Serves a labeling session over HTTP while the pipeline waits for answers.
//!
//! By default a scripted client answers every pending query from the ground
//! truth. With `--wait` the server stays up for a browser or curl:
//!
//!     cargo run --example labeling_service -- --wait
//!     curl localhost:<port>/queries/pending
//!     curl -X POST localhost:<port>/labels -H 'content-type: application/json' \
//!          -d '{"query_id":"...","class_index":1}'

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use memlabel::service::{serve_session, PendingQuery, ServiceProvider, SharedSession};
use memlabel::{
    build_distance_matrix, generate_synthetic, run_pipeline, Budget, DistanceFunction, LabelSession,
    MemoryGenConfig, SyntheticSpec,
};

fn http(addr: SocketAddr, method: &str, path: &str, body: &str) -> std::io::Result<String> {
    let mut s = TcpStream::connect(addr)?;
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    let mut reply = String::new();
    s.read_to_string(&mut reply)?;
    Ok(reply.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let wait = std::env::args().any(|a| a == "--wait");
    let spec = SyntheticSpec::from_toml(include_str!("data/rhythms.toml"))?;
    let (ds, gt) = generate_synthetic(&spec, 11)?;
    let space = spec.label_space()?;
    let matrix = build_distance_matrix(&ds, &DistanceFunction::dtw())?;
    let ds = Arc::new(ds);

    let shared = SharedSession::new(LabelSession::in_memory("demo", space.clone(), 30));
    let service = serve_session(shared.clone(), ds.clone(), None, "127.0.0.1:0".parse()?)?;
    println!("serving on {}", service.base_url());

    let pipeline = {
        let (ds, shared) = (ds.clone(), shared.clone());
        thread::spawn(move || {
            let mut provider = ServiceProvider::new(shared);
            run_pipeline(&ds, &matrix, &MemoryGenConfig::new(12.0, 0), &[1, 2], Budget::new(30), 2, &mut provider)
        })
    };

    if !wait {
        let addr = service.local_addr();
        while !pipeline.is_finished() {
            let pending: Vec<PendingQuery> = serde_json::from_str(&http(addr, "GET", "/queries/pending", "")?)?;
            for q in pending {
                let class = gt.get(&q.sample_id).expect("ground truth");
                let body = format!(r#"{{"query_id":"{}","class_index":{class}}}"#, q.query_id);
                println!("{} -> {}: {}", q.sample_id, class, http(addr, "POST", "/labels", &body)?);
            }
            thread::sleep(Duration::from_millis(20));
        }
        println!("progress: {}", http(addr, "GET", "/progress", "")?);
    }
    let out = pipeline.join().expect("pipeline thread")?;
    println!("{} weak-label columns from {} labels", out.matrix.n_functions(), out.budget.consumed);
    Ok(())
}
