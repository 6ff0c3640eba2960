//! HTTP client for external embedding services.
//!
//! Request: `POST endpoint` with `{"texts": [...], "level": "token" | "pooled"}`.
//! Response: `{"dim": d, "embeddings": ...}` where token-level responses hold
//! one `tokens x d` matrix per text and pooled responses one vector per text.
//! Token-level responses may also carry `"tokens": [[...], ...]`.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{BackendDescriptor, ResponseLevel, TokenEmbeddingMatrix};

/// Environment variable holding a bearer token for the service.
pub const API_KEY_ENV: &str = "PTE_EMBED_API_KEY";

/// Row label used when a pre-pooled service returns a single vector.
pub const POOLED_ROW_TOKEN: &str = "[POOLED]";

#[derive(Debug, Serialize)]
pub struct EmbedRequest<'a> {
    pub texts: &'a [&'a str],
    pub level: ResponseLevel,
}

#[derive(Debug, Deserialize)]
struct TokenResponse {
    dim: usize,
    embeddings: Vec<Vec<Vec<f32>>>,
    #[serde(default)]
    tokens: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Deserialize)]
struct PooledResponse {
    dim: usize,
    embeddings: Vec<Vec<f32>>,
}

pub struct RemoteClient {
    descriptor: BackendDescriptor,
    endpoint: String,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl RemoteClient {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self> {
        let endpoint = descriptor
            .endpoint
            .clone()
            .ok_or_else(|| Error::InvalidParameter("remote backend requires an endpoint".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(descriptor.remote.timeout_ms))
            .build()
            .map_err(|e| Error::BackendFatal(format!("cannot build HTTP client: {e}")))?;
        Ok(RemoteClient {
            descriptor,
            endpoint,
            client,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }

    fn post_once(&self, texts: &[&str]) -> std::result::Result<String, (bool, String)> {
        let body = EmbedRequest {
            texts,
            level: self.descriptor.level,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| (true, e.to_string()))?;
        if status.is_success() {
            Ok(text)
        } else {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            Err((retryable, format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())))
        }
    }

    /// Sends one batch with bounded retries and exponential backoff.
    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<TokenEmbeddingMatrix>> {
        let policy = &self.descriptor.remote;
        let attempts_allowed = policy.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts_allowed {
            match self.post_once(texts) {
                Ok(body) => return self.parse(texts.len(), &body),
                Err((false, msg)) => return Err(Error::BackendFatal(msg)),
                Err((true, msg)) => {
                    log::warn!("embedding request attempt {attempt}/{attempts_allowed} failed: {msg}");
                    last = msg;
                    if attempt < attempts_allowed {
                        let backoff = policy.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16));
                        thread::sleep(Duration::from_millis(backoff));
                    }
                }
            }
        }
        Err(Error::BackendRetryable {
            attempts: attempts_allowed,
            message: last,
        })
    }

    fn parse(&self, expected: usize, body: &str) -> Result<Vec<TokenEmbeddingMatrix>> {
        let want = self.descriptor.dim;
        let check_dim = |got: usize| {
            if got != want {
                Err(Error::DimensionMismatch {
                    expected: want,
                    actual: got,
                })
            } else {
                Ok(())
            }
        };
        let bad = |msg: String| Error::BackendFatal(format!("malformed response: {msg}"));
        let out: Vec<TokenEmbeddingMatrix> = match self.descriptor.level {
            ResponseLevel::Token => {
                let r: TokenResponse = serde_json::from_str(body).map_err(|e| bad(e.to_string()))?;
                check_dim(r.dim)?;
                let tokens = r.tokens.unwrap_or_default();
                r.embeddings
                    .into_iter()
                    .enumerate()
                    .map(|(i, rows)| {
                        let names = tokens
                            .get(i)
                            .filter(|t| t.len() == rows.len())
                            .cloned()
                            .unwrap_or_else(|| (0..rows.len()).map(|j| format!("#{j}")).collect());
                        for row in &rows {
                            check_dim(row.len())?;
                        }
                        TokenEmbeddingMatrix::new(names, want, rows.concat())
                    })
                    .collect::<Result<_>>()?
            }
            ResponseLevel::Pooled => {
                let r: PooledResponse = serde_json::from_str(body).map_err(|e| bad(e.to_string()))?;
                check_dim(r.dim)?;
                r.embeddings
                    .into_iter()
                    .map(|v| {
                        check_dim(v.len())?;
                        TokenEmbeddingMatrix::new(vec![POOLED_ROW_TOKEN.into()], want, v)
                    })
                    .collect::<Result<_>>()?
            }
        };
        if out.len() != expected {
            return Err(bad(format!("expected {expected} embeddings, got {}", out.len())));
        }
        Ok(out)
    }
}
