//! Client for a remote embedding service.
//!
//! Speaks the widely deployed JSON embeddings API: POST
//! `{"model": ..., "input": [text]}` to the configured endpoint, read
//! `{"data": [{"embedding": [...]}]}`. In-flight requests are bounded by
//! a counting semaphore. The bearer token is held in a redacting wrapper
//! and never written to logs or error messages.

use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;

use crate::metrics::EmbeddingVector;

use super::{EmbedContext, EmbeddingProvider, ProviderError};

/// Bearer token that cannot leak through Debug or Display.
pub struct SecretToken(String);

impl SecretToken {
    pub fn new(token: impl Into<String>) -> Self {
        Self(token.into())
    }

    fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for SecretToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretToken(<redacted>)")
    }
}

/// Counting semaphore bounding concurrent requests.
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    pub(crate) fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

pub(crate) struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().unwrap();
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingData>,
}

#[derive(Deserialize)]
struct EmbeddingData {
    embedding: Vec<f64>,
}

/// Remote embedding service client.
pub struct RemoteProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    token: Option<SecretToken>,
    dimension: usize,
    permits: Semaphore,
}

impl fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("dimension", &self.dimension)
            .field("token", &self.token)
            .finish_non_exhaustive()
    }
}

impl RemoteProvider {
    /// `endpoint` is the full URL the embeddings request is posted to.
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        dimension: usize,
        token: Option<SecretToken>,
        max_in_flight: usize,
    ) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            model: model.into(),
            token,
            dimension,
            permits: Semaphore::new(max_in_flight),
        })
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str, _ctx: &EmbedContext<'_>) -> Result<EmbeddingVector, ProviderError> {
        let _permit = self.permits.acquire();
        let mut request = self.client.post(&self.endpoint).json(&serde_json::json!({
            "model": self.model,
            "input": [text],
        }));
        if let Some(token) = &self.token {
            request = request.bearer_auth(token.expose());
        }
        let response = request
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(ProviderError::Status {
                status: status.as_u16(),
            });
        }
        let parsed: EmbeddingsResponse = response
            .json()
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        let first = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::MalformedResponse("empty data array".into()))?;
        if first.embedding.len() != self.dimension {
            return Err(ProviderError::Dimension {
                expected: self.dimension,
                got: first.embedding.len(),
            });
        }
        Ok(EmbeddingVector::new(first.embedding)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{MockResponse, MockServer};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn ctx() -> EmbedContext<'static> {
        EmbedContext {
            question_id: "q",
            node_id: "m",
            trial: 0,
        }
    }

    #[test]
    fn posts_model_and_input_and_reads_vector() {
        let server = MockServer::start(1, |_req| {
            MockResponse::json(r#"{"object":"list","data":[{"embedding":[0.5,1.5,-2.0],"index":0}]}"#)
        });
        let provider = RemoteProvider::new(
            format!("{}/v1/embeddings", server.url()),
            "test-embed",
            3,
            Some(SecretToken::new("sk-secret-123")),
            4,
        )
        .unwrap();
        let v = provider.embed("hello world", &ctx()).unwrap();
        assert_eq!(v.as_slice(), &[0.5, 1.5, -2.0]);

        let requests = server.finish();
        assert_eq!(requests.len(), 1);
        let req = &requests[0];
        assert_eq!(req.method, "POST");
        assert_eq!(req.path, "/v1/embeddings");
        assert_eq!(req.header("authorization"), Some("Bearer sk-secret-123"));
        let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
        assert_eq!(body["model"], "test-embed");
        assert_eq!(body["input"][0], "hello world");
    }

    #[test]
    fn omits_auth_header_without_token() {
        let server = MockServer::start(1, |_req| {
            MockResponse::json(r#"{"data":[{"embedding":[1.0]}]}"#)
        });
        let provider = RemoteProvider::new(server.url(), "m", 1, None, 1).unwrap();
        provider.embed("x", &ctx()).unwrap();
        let requests = server.finish();
        assert_eq!(requests[0].header("authorization"), None);
    }

    #[test]
    fn surfaces_http_status() {
        let server = MockServer::start(1, |_req| MockResponse::status(503, "{}"));
        let provider = RemoteProvider::new(server.url(), "m", 1, None, 1).unwrap();
        match provider.embed("x", &ctx()) {
            Err(ProviderError::Status { status }) => assert_eq!(status, 503),
            other => panic!("expected status error, got {other:?}"),
        }
        server.finish();
    }

    #[test]
    fn rejects_wrong_dimension() {
        let server = MockServer::start(1, |_req| {
            MockResponse::json(r#"{"data":[{"embedding":[1.0,2.0]}]}"#)
        });
        let provider = RemoteProvider::new(server.url(), "m", 3, None, 1).unwrap();
        match provider.embed("x", &ctx()) {
            Err(ProviderError::Dimension { expected, got }) => {
                assert_eq!((expected, got), (3, 2));
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
        server.finish();
    }

    #[test]
    fn rejects_malformed_body() {
        let server = MockServer::start(1, |_req| MockResponse::json("{\"data\":[]}"));
        let provider = RemoteProvider::new(server.url(), "m", 1, None, 1).unwrap();
        assert!(matches!(
            provider.embed("x", &ctx()),
            Err(ProviderError::MalformedResponse(_))
        ));
        server.finish();
    }

    #[test]
    fn debug_output_redacts_token() {
        let provider = RemoteProvider::new(
            "http://localhost:1/v1/embeddings",
            "m",
            4,
            Some(SecretToken::new("sk-very-secret")),
            2,
        )
        .unwrap();
        let debug = format!("{provider:?}");
        assert!(!debug.contains("sk-very-secret"));
        assert!(debug.contains("redacted"));
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        let sem = Arc::new(Semaphore::new(2));
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let sem = Arc::clone(&sem);
            let current = Arc::clone(&current);
            let peak = Arc::clone(&peak);
            handles.push(std::thread::spawn(move || {
                let _permit = sem.acquire();
                let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(10));
                current.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2, "peak {peak:?}");
    }
}
