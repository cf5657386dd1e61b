// SPDX-License-Identifier: Apache-2.0

//! HTTP chat-completion backend with bounded exponential backoff.

use std::thread;
use std::time::Duration;

use serde_json::json;

use super::{BackendKind, CompletionRequest, LlmBackend, LlmError};

pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(20) }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay
            .saturating_mul(2u32.saturating_pow(attempt))
            .min(self.max_delay)
    }
}

#[derive(Debug)]
pub struct RemoteBackend {
    base_url: String,
    api_key: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Transient(LlmError),
    Fatal(LlmError),
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
            agent,
        }
    }

    /// Reads `LLM_API_BASE` (optional) and `LLM_API_KEY`.
    pub fn from_env() -> Result<Self, LlmError> {
        let key = std::env::var("LLM_API_KEY")
            .map_err(|_| LlmError::AuthFailure("LLM_API_KEY is not set".into()))?;
        let base = std::env::var("LLM_API_BASE").unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        Ok(Self::new(base, key))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, request: &CompletionRequest, attempts: u32) -> Attempt {
        let body = json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
        });
        let url = format!("{}/chat/completions", self.base_url);
        let response = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body);
        let mut response = match response {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Transient(LlmError::NetworkFailure { attempts, message: e.to_string() })
            }
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fatal(LlmError::AuthFailure(format!("HTTP {status}"))),
            429 => return Attempt::Transient(LlmError::RateLimited { attempts }),
            500..=599 => {
                return Attempt::Transient(LlmError::NetworkFailure {
                    attempts,
                    message: format!("HTTP {status}"),
                })
            }
            _ => return Attempt::Fatal(LlmError::Protocol(format!("HTTP {status}"))),
        }
        let value: serde_json::Value = match response.body_mut().read_json() {
            Ok(v) => v,
            Err(e) => return Attempt::Fatal(LlmError::Protocol(e.to_string())),
        };
        match value["choices"][0]["message"]["content"].as_str() {
            Some(text) => Attempt::Done(text.to_string()),
            None => Attempt::Fatal(LlmError::Protocol("missing choices[0].message.content".into())),
        }
    }
}

impl LlmBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn send(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let mut attempt = 0u32;
        loop {
            match self.attempt(request, attempt + 1) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(e) => {
                    if attempt >= request.max_retries {
                        return Err(e);
                    }
                    log::warn!("LLM request failed ({e}); retrying");
                    thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{complete, LlmSettings, TaskKind};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves the given (status, body) pairs in order, one per connection.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (format!("http://{addr}"), hits, handle)
    }

    fn fast() -> RetryPolicy {
        RetryPolicy { base_delay: Duration::from_millis(1), max_delay: Duration::from_millis(5) }
    }

    fn request(max_retries: u32) -> CompletionRequest {
        let s = LlmSettings { max_retries, ..LlmSettings::default() };
        s.request(TaskKind::Verify, "system".into(), "user".into())
    }

    #[test]
    fn sends_chat_completion() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"ENTRY 1: SCORE=95"}}]}"#;
        let (url, _, handle) = serve(vec![(200, ok.into())]);
        let backend = RemoteBackend::new(url, "k").with_retry(fast());
        assert_eq!(complete(&backend, &request(0)).unwrap(), "ENTRY 1: SCORE=95");
        let body: serde_json::Value = serde_json::from_str(&handle.join().unwrap()[0]).unwrap();
        assert_eq!(body["model"], "gpt-4-0613");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "user");
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let ok = r#"{"choices":[{"message":{"content":"fine"}}]}"#;
        let (url, hits, handle) = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, ok.into())]);
        let backend = RemoteBackend::new(url, "k").with_retry(fast());
        assert_eq!(complete(&backend, &request(2)).unwrap(), "fine");
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let (url, hits, handle) = serve(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
        let backend = RemoteBackend::new(url, "k").with_retry(fast());
        let err = complete(&backend, &request(2)).unwrap_err();
        assert!(matches!(err, LlmError::NetworkFailure { attempts: 3, .. }));
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn unreachable_host_is_network_failure() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let backend = RemoteBackend::new(format!("http://127.0.0.1:{port}"), "k").with_retry(fast());
        let err = complete(&backend, &request(1)).unwrap_err();
        assert!(matches!(err, LlmError::NetworkFailure { attempts: 2, .. }));
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let (url, hits, handle) = serve(vec![(401, "{}".into())]);
        let backend = RemoteBackend::new(url, "bad").with_retry(fast());
        assert!(matches!(complete(&backend, &request(3)), Err(LlmError::AuthFailure(_))));
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy { base_delay: Duration::from_millis(100), max_delay: Duration::from_millis(350) };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(1), Duration::from_millis(200));
        assert_eq!(p.delay(2), Duration::from_millis(350));
    }
}
