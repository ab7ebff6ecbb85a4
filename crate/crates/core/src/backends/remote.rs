//! Chat-completion client for hosted models.
//!
//! Requests use the common `POST {base_url}/chat/completions` shape
//! (`model`, `messages[]`, `temperature`) and read
//! `choices[0].message.content`. Text embeddings use `POST {base_url}/embeddings`.
//! The credential is read from an environment variable and is never written
//! to the attempt log.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::scripted::hash64;
use super::{LlmPort, PortError, VisionPort};
use crate::model::TemporalInterval;

pub const DEFAULT_CREDENTIAL_ENV: &str = "QTR_API_KEY";

/// Instruction sent with clip references for remote description.
pub const DESCRIBE_INSTRUCTION: &str = "Describe events in this clip";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_ms: u64,
    pub retry_limit: u32,
    pub credential_env: String,
    pub embedding_model: Option<String>,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Seeds backoff jitter and request ids.
    pub seed: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8080/v1".to_string(),
            model: "default".to_string(),
            temperature: 0.0,
            timeout_ms: 30_000,
            retry_limit: 3,
            credential_env: DEFAULT_CREDENTIAL_ENV.to_string(),
            embedding_model: None,
            backoff_base_ms: 200,
            backoff_max_ms: 5_000,
            seed: 0,
        }
    }
}

/// One HTTP attempt as recorded for the session trace. Carries no headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteAttempt {
    pub request_id: String,
    pub attempt: u32,
    pub status: Option<u16>,
    pub error: Option<String>,
    pub backoff_ms: u64,
}

pub struct RemoteClient {
    cfg: EndpointConfig,
    api_key: String,
    agent: ureq::Agent,
    rng: Mutex<ChaCha8Rng>,
    counter: AtomicU64,
    log: Mutex<Vec<RemoteAttempt>>,
}

enum Failure {
    Retriable(PortError),
    Fatal(PortError),
}

impl RemoteClient {
    /// Reads the credential from `cfg.credential_env`.
    pub fn from_env(cfg: EndpointConfig) -> Result<Self, PortError> {
        let key = std::env::var(&cfg.credential_env)
            .map_err(|_| PortError::MissingCredential(cfg.credential_env.clone()))?;
        Ok(Self::with_api_key(cfg, key))
    }

    pub fn with_api_key(cfg: EndpointConfig, api_key: impl Into<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build();
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        RemoteClient {
            cfg,
            api_key: api_key.into(),
            agent,
            rng: Mutex::new(rng),
            counter: AtomicU64::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn attempt_log(&self) -> Vec<RemoteAttempt> {
        self.log.lock().expect("attempt log poisoned").clone()
    }

    fn next_request_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        format!("qtr-{:016x}", hash64(&[&self.cfg.seed.to_le_bytes(), &n.to_le_bytes()]))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.cfg.backoff_base_ms;
        let exp = base.saturating_mul(1u64 << (attempt.saturating_sub(1)).min(20));
        let jitter = if base == 0 {
            0
        } else {
            self.rng.lock().expect("rng poisoned").gen_range(0..base)
        };
        Duration::from_millis(exp.min(self.cfg.backoff_max_ms) + jitter)
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    /// POSTs `body` with retries on transport failures, timeouts, 429 and 5xx.
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, PortError> {
        let request_id = self.next_request_id();
        let attempts = self.cfg.retry_limit.max(1);
        let mut last = PortError::Other("no attempt made".into());
        for attempt in 1..=attempts {
            let outcome = self.try_once(path, body, &request_id);
            let (status, error) = match &outcome {
                Ok(_) => (Some(200), None),
                Err(Failure::Retriable(e)) | Err(Failure::Fatal(e)) => (
                    match e {
                        PortError::HttpStatus { code, .. } => Some(*code),
                        _ => None,
                    },
                    Some(e.to_string()),
                ),
            };
            let retry = matches!(outcome, Err(Failure::Retriable(_))) && attempt < attempts;
            let backoff = if retry { self.backoff(attempt) } else { Duration::ZERO };
            self.log.lock().expect("attempt log poisoned").push(RemoteAttempt {
                request_id: request_id.clone(),
                attempt,
                status,
                error,
                backoff_ms: backoff.as_millis() as u64,
            });
            match outcome {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retriable(e)) => {
                    last = e;
                    if retry {
                        std::thread::sleep(backoff);
                    }
                }
            }
        }
        Err(last)
    }

    fn try_once(&self, path: &str, body: &Value, request_id: &str) -> Result<Value, Failure> {
        let response = self
            .agent
            .post(&self.url(path))
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .set("X-Request-Id", request_id)
            .send_json(body.clone());
        match response {
            Ok(resp) => resp.into_json::<Value>().map_err(|e| {
                if is_timeout(&e) {
                    Failure::Retriable(PortError::Timeout { request_id: request_id.into() })
                } else {
                    Failure::Fatal(PortError::MalformedResponse {
                        request_id: request_id.into(),
                        detail: e.to_string(),
                    })
                }
            }),
            Err(ureq::Error::Status(code, _)) => {
                let err = PortError::HttpStatus { code, request_id: request_id.into() };
                if code == 429 || code >= 500 {
                    Err(Failure::Retriable(err))
                } else {
                    Err(Failure::Fatal(err))
                }
            }
            Err(ureq::Error::Transport(t)) => {
                if is_timeout(&t) {
                    Err(Failure::Retriable(PortError::Timeout { request_id: request_id.into() }))
                } else {
                    Err(Failure::Retriable(PortError::Transport {
                        request_id: request_id.into(),
                        detail: t.to_string(),
                    }))
                }
            }
        }
    }

    /// Sends one chat-completion request and returns the first choice's text.
    pub fn remote_complete(&self, system: &str, user: &str) -> Result<String, PortError> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.cfg.temperature,
        });
        let value = self.post_json("chat/completions", &body)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| PortError::MalformedResponse {
                request_id: self.last_request_id(),
                detail: "missing choices[0].message.content".into(),
            })
    }

    pub fn remote_embed(&self, input: &str) -> Result<Vec<f64>, PortError> {
        let model = self.cfg.embedding_model.as_deref().unwrap_or(&self.cfg.model);
        let body = json!({ "model": model, "input": input });
        let value = self.post_json("embeddings", &body)?;
        let arr = value
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| PortError::MalformedResponse {
                request_id: self.last_request_id(),
                detail: "missing data[0].embedding".into(),
            })?;
        arr.iter()
            .map(|x| {
                x.as_f64().ok_or_else(|| PortError::MalformedResponse {
                    request_id: self.last_request_id(),
                    detail: "non-numeric embedding component".into(),
                })
            })
            .collect()
    }

    fn last_request_id(&self) -> String {
        self.log
            .lock()
            .expect("attempt log poisoned")
            .last()
            .map(|a| a.request_id.clone())
            .unwrap_or_default()
    }
}

fn is_timeout(err: &(dyn std::error::Error + 'static)) -> bool {
    let mut cur: Option<&(dyn std::error::Error + 'static)> = Some(err);
    while let Some(e) = cur {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        cur = e.source();
    }
    err.to_string().contains("timed out")
}

impl LlmPort for RemoteClient {
    fn complete(&self, system: &str, user: &str) -> Result<String, PortError> {
        self.remote_complete(system, user)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, PortError> {
        self.remote_embed(text)
    }
}

/// Vision port backed by the same remote endpoint: descriptions through chat
/// completion, frame embeddings through the embeddings route keyed by a
/// frame reference.
pub struct RemoteVision {
    client: RemoteClient,
}

impl RemoteVision {
    pub fn new(client: RemoteClient) -> Self {
        RemoteVision { client }
    }

    pub fn client(&self) -> &RemoteClient {
        &self.client
    }
}

impl VisionPort for RemoteVision {
    fn embed(&self, video_id: &str, time_s: f64) -> Result<Vec<f64>, PortError> {
        self.client.remote_embed(&format!("frame:{video_id}@{time_s}"))
    }

    fn describe(&self, video_id: &str, interval: &TemporalInterval) -> Result<String, PortError> {
        self.client.remote_complete(
            "You describe video clips objectively.",
            &format!("{DESCRIBE_INSTRUCTION}\nClip: {video_id} {interval}"),
        )
    }
}
