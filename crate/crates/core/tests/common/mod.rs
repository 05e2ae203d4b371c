//! Shared test support: a scripted HTTP stub server, the planted-signal
//! geometry generator, and synthetic corpus builders.

#![allow(dead_code)]

pub mod fixture;

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use iun_core::clustering::{Algorithm, ClusterCase};
use iun_core::corpus::{top_chunk, Chunk, Document};
use iun_core::embeddings::{EmbeddingMatrix, EmbeddingSpec, ReductionSpec};

/// Minimal scripted HTTP server. Each POST body is captured; the responder
/// maps (request index, parsed body) to (status, JSON response).
pub struct StubServer {
    url: String,
    requests: Arc<Mutex<Vec<serde_json::Value>>>,
    shutdown: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
    raw_addr: std::net::SocketAddr,
}

impl StubServer {
    pub fn start<F>(responder: F) -> StubServer
    where
        F: Fn(usize, &serde_json::Value) -> (u16, serde_json::Value) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let raw_addr = listener.local_addr().expect("local addr");
        let url = format!("http://{raw_addr}");
        let requests: Arc<Mutex<Vec<serde_json::Value>>> = Arc::new(Mutex::new(Vec::new()));
        let shutdown = Arc::new(AtomicBool::new(false));

        let reqs = requests.clone();
        let stop = shutdown.clone();
        let handle = std::thread::spawn(move || {
            let mut count = 0usize;
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { break };
                if let Some(body) = read_request(stream.try_clone().expect("clone stream")) {
                    reqs.lock().expect("requests lock").push(body.clone());
                    let (status, resp) = responder(count, &body);
                    count += 1;
                    respond(stream, status, &resp);
                }
            }
        });

        StubServer { url, requests, shutdown, handle: Some(handle), raw_addr }
    }

    pub fn url(&self) -> String {
        self.url.clone()
    }

    pub fn requests(&self) -> Vec<serde_json::Value> {
        self.requests.lock().expect("requests lock").clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().expect("requests lock").len()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.raw_addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn read_request(mut stream: TcpStream) -> Option<serde_json::Value> {
    let mut buf = Vec::new();
    let mut tmp = [0u8; 4096];
    let header_end = loop {
        if let Some(pos) = find_subslice(&buf, b"\r\n\r\n") {
            break pos + 4;
        }
        let n = stream.read(&mut tmp).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&tmp[..n]);
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length: usize = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            if name.trim().eq_ignore_ascii_case("content-length") {
                value.trim().parse().ok()
            } else {
                None
            }
        })
        .unwrap_or(0);
    while buf.len() < header_end + content_length {
        let n = stream.read(&mut tmp).ok()?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&tmp[..n]);
    }
    serde_json::from_slice(&buf[header_end..header_end + content_length]).ok()
}

fn respond(mut stream: TcpStream, status: u16, body: &serde_json::Value) {
    let payload = body.to_string();
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = stream.flush();
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Chat-completions response with the given content string.
pub fn chat_reply(content: &str) -> serde_json::Value {
    serde_json::json!({
        "choices": [{ "message": { "role": "assistant", "content": content } }]
    })
}

pub fn test_chunk(id: &str, text: &str) -> Chunk {
    top_chunk(&Document { id: id.into(), text: text.into() }, 1000)
}

/// One planted-signal instance: cluster centers in a 20-dim ball, ten of
/// them marked important, nearby centers pulled 20% toward each important
/// one, then >= 5 noisy samples per cluster.
pub struct PlantedInstance {
    pub matrix: EmbeddingMatrix,
    pub case: ClusterCase,
    /// Per-cluster planted importance (1.0 or 0.0).
    pub importance: Vec<f64>,
}

pub const PLANTED_DIM: usize = 20;
pub const PLANTED_CENTERS: usize = 60;
pub const PLANTED_IMPORTANT: usize = 10;

pub fn planted_instance(seed: u64) -> PlantedInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = PLANTED_DIM;
    let n_centers = PLANTED_CENTERS;

    // uniform in the unit ball: gaussian direction, radius U^(1/dim)
    let mut centers: Vec<Vec<f64>> = (0..n_centers)
        .map(|_| {
            let g: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
            let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let radius = rng.random::<f64>().powf(1.0 / dim as f64);
            g.iter().map(|x| x / norm * radius).collect()
        })
        .collect();

    let importance: Vec<f64> = (0..n_centers)
        .map(|c| if c < PLANTED_IMPORTANT { 1.0 } else { 0.0 })
        .collect();

    // Pull the nearest half of the other centers 20% of the way toward each
    // important center. Neighborhoods come from the original placement and
    // pulls target the original anchor positions, applied in anchor order.
    let original = centers.clone();
    for imp in 0..PLANTED_IMPORTANT {
        let anchor = &original[imp];
        let mut others: Vec<(usize, f64)> = (0..n_centers)
            .filter(|&c| c != imp)
            .map(|c| {
                let d: f64 = original[c]
                    .iter()
                    .zip(anchor)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (c, d)
            })
            .collect();
        others.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for &(c, _) in others.iter().take((n_centers - 1) / 2) {
            for j in 0..dim {
                centers[c][j] += 0.2 * (anchor[j] - centers[c][j]);
            }
        }
    }

    // >= 5 samples per cluster with small isotropic noise
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        let size = 5 + (c % 6);
        for _ in 0..size {
            let p: Vec<f64> = center.iter().map(|v| v + 0.02 * gaussian(&mut rng)).collect();
            rows.push(p);
            labels.push(c as i64);
        }
    }

    let ids: Vec<String> = (0..rows.len()).map(|i| format!("p{i}")).collect();
    let n = rows.len();
    let matrix = EmbeddingMatrix::new(
        ids,
        dim,
        rows.into_iter().flatten().collect(),
        "planted",
        ReductionSpec::none(),
    )
    .expect("valid planted matrix");
    let case = ClusterCase {
        dataset: "planted".into(),
        corpus_size: n,
        embedding: EmbeddingSpec { model: "planted".into(), dim },
        reduction: ReductionSpec::none(),
        algorithm: Algorithm::External("planted".into()),
        target_k: n_centers,
        seed: None,
        labels,
        n_clusters: n_centers,
    };
    PlantedInstance { matrix, case, importance }
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
