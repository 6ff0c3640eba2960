//! Remote backend against a local stub service that serves hash embeddings.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

use pte_core::cohort::{generate_synthetic_cohort, SyntheticConfig};
use pte_core::embedder::{hash, pool, BackendDescriptor, Embedder, PoolingStrategy, ResponseLevel};
use pte_core::eval::{all_paragraph_keys, ExperimentData};
use pte_core::features::Vocabularies;
use pte_core::{Error, ErrorCategory};

const DIM: usize = 32;

type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

struct Stub {
    url: String,
    requests: Arc<AtomicUsize>,
}

fn serve(handler: impl Fn(usize, &Value) -> (u16, String) + Send + Sync + 'static) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/embed", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let counter = requests.clone();
    let handler: Arc<Handler> = Arc::new(handler);
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let (h, c) = (handler.clone(), counter.clone());
            thread::spawn(move || respond(stream, &*h, &c));
        }
    });
    Stub { url, requests }
}

fn respond(stream: TcpStream, handler: &Handler, counter: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let request: Value = serde_json::from_slice(&body).unwrap();
    let index = counter.fetch_add(1, Ordering::SeqCst);
    let (status, payload) = handler(index, &request);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
}

fn texts(request: &Value) -> Vec<String> {
    request["texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t.as_str().unwrap().to_string())
        .collect()
}

/// Token-level response built from the hash backend.
fn hash_tokens(request: &Value) -> String {
    let ms: Vec<_> = texts(request).iter().map(|t| hash::embed(t, DIM, 0)).collect();
    let rows: Vec<Vec<Vec<f32>>> = ms.iter().map(|m| m.rows().map(<[f32]>::to_vec).collect()).collect();
    let tokens: Vec<&[String]> = ms.iter().map(|m| m.tokens()).collect();
    json!({"dim": DIM, "embeddings": rows, "tokens": tokens}).to_string()
}

fn remote(url: &str) -> BackendDescriptor {
    let mut d = BackendDescriptor::remote("stub", url, DIM);
    d.max_batch = 7;
    d.remote.max_in_flight = 3;
    d.remote.backoff_ms = 1;
    d
}

#[test]
fn token_level_service_matches_hash_backend_bit_for_bit() {
    let stub = serve(|_, r| {
        assert_eq!(r["level"], "token");
        (200, hash_tokens(r))
    });
    let cohort = generate_synthetic_cohort(&SyntheticConfig::new(3, 40, 0.25)).unwrap();
    let keys = all_paragraph_keys();
    let poolings = PoolingStrategy::ALL;
    let vocab = Vocabularies::default();

    let local = Embedder::new(BackendDescriptor::hash(DIM, 0)).unwrap();
    let served = Embedder::new(remote(&stub.url)).unwrap();
    let a = ExperimentData::build(&cohort, &vocab, &local, &keys, &poolings).unwrap();
    let b = ExperimentData::build(&cohort, &vocab, &served, &keys, &poolings).unwrap();
    for p in poolings {
        assert_eq!(a.embeddings[&p].vectors, b.embeddings[&p].vectors, "{p} pooling");
    }
    // Several batches, so reassembly order is exercised.
    assert!(stub.requests.load(Ordering::SeqCst) > 3);
}

#[test]
fn pre_pooled_service_serves_only_its_pooling() {
    let stub = serve(|_, r| {
        assert_eq!(r["level"], "pooled");
        let v: Vec<Vec<f32>> = texts(r)
            .iter()
            .map(|t| pool(&hash::embed(t, DIM, 0), PoolingStrategy::Mean))
            .collect();
        (200, json!({"dim": DIM, "embeddings": v}).to_string())
    });
    let mut d = remote(&stub.url);
    d.level = ResponseLevel::Pooled;
    d.service_pooling = Some(PoolingStrategy::Mean);
    let served = Embedder::new(d).unwrap();
    let local = Embedder::new(BackendDescriptor::hash(DIM, 0)).unwrap();

    let cohort = generate_synthetic_cohort(&SyntheticConfig::new(5, 20, 0.25)).unwrap();
    let keys = all_paragraph_keys();
    let a = local.embed_cohort(&cohort.subjects, &keys, &[PoolingStrategy::Mean]).unwrap();
    let b = served.embed_cohort(&cohort.subjects, &keys, &[PoolingStrategy::Mean]).unwrap();
    assert_eq!(a[0].vectors, b[0].vectors);

    let err = served
        .embed_cohort(&cohort.subjects, &keys, &[PoolingStrategy::Max])
        .unwrap_err();
    assert!(matches!(err, Error::UnsupportedPooling { .. }), "{err}");
}

#[test]
fn transient_failures_are_retried() {
    let stub = serve(|i, r| if i < 2 { (503, "busy".into()) } else { (200, hash_tokens(r)) });
    let e = Embedder::new(remote(&stub.url)).unwrap();
    let got = e.embed_texts(&["GCS 15"]).unwrap();
    assert_eq!(got[0], hash::embed("GCS 15", DIM, 0));
    assert_eq!(stub.requests.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let stub = serve(|_, _| (429, "slow down".into()));
    let mut d = remote(&stub.url);
    d.remote.max_retries = 1;
    let err = Embedder::new(d).unwrap().embed_texts(&["x"]).unwrap_err();
    assert!(matches!(err, Error::BackendRetryable { attempts: 2, .. }), "{err}");
    assert_eq!(err.category(), ErrorCategory::Backend);
    assert_eq!(stub.requests.load(Ordering::SeqCst), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = serve(|_, _| (400, "bad request".into()));
    let err = Embedder::new(remote(&stub.url)).unwrap().embed_texts(&["x"]).unwrap_err();
    assert!(matches!(err, Error::BackendFatal(_)), "{err}");
    assert_eq!(stub.requests.load(Ordering::SeqCst), 1);
}

#[test]
fn wrong_dimension_is_rejected() {
    let stub = serve(|_, r| {
        let n = texts(r).len();
        (200, json!({"dim": DIM + 1, "embeddings": vec![vec![vec![0.0f32; DIM + 1]]; n]}).to_string())
    });
    let err = Embedder::new(remote(&stub.url)).unwrap().embed_texts(&["x"]).unwrap_err();
    assert!(
        matches!(err, Error::DimensionMismatch { expected: DIM, actual } if actual == DIM + 1),
        "{err}"
    );
}

#[test]
fn short_response_is_malformed() {
    let stub = serve(|_, _| (200, json!({"dim": DIM, "embeddings": []}).to_string()));
    let err = Embedder::new(remote(&stub.url)).unwrap().embed_texts(&["x", "y"]).unwrap_err();
    assert!(matches!(&err, Error::BackendFatal(m) if m.contains("malformed")), "{err}");
}
