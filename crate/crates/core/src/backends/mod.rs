//! Port definitions for the language model and vision encoder, plus the
//! implementations the engine ships with.
//!
//! * [`scripted`]: deterministic world-driven ports for tests and desk-scale runs.
//! * [`remote`]: a chat-completion client for live endpoints.
//! * [`framefile`]: precomputed per-frame vectors read from a directory manifest.
//! * [`instrument`]: call-counting wrappers used for frame accounting checks.

use std::sync::Arc;

use thiserror::Error;

use crate::model::TemporalInterval;

pub mod framefile;
pub mod instrument;
pub mod remote;
pub mod scripted;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PortError {
    #[error("request {request_id}: http status {code}")]
    HttpStatus { code: u16, request_id: String },
    #[error("request {request_id}: timed out")]
    Timeout { request_id: String },
    #[error("request {request_id}: malformed response: {detail}")]
    MalformedResponse { request_id: String, detail: String },
    #[error("request {request_id}: transport failure: {detail}")]
    Transport { request_id: String, detail: String },
    #[error("unknown video {0}")]
    UnknownVideo(String),
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
    #[error("replay has no recorded reply for {0}")]
    ReplayMissing(String),
    #[error("replay diverged: {0}")]
    ReplayDivergence(String),
    #[error("{0}")]
    Other(String),
}

/// The language-model side: completion and text embedding.
pub trait LlmPort: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, PortError>;

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, PortError>;

    fn ping(&self) -> Result<(), PortError> {
        Ok(())
    }
}

/// The vision side: per-frame embeddings and clip descriptions.
pub trait VisionPort: Send + Sync {
    /// Deterministic for a given `(video_id, time_s)`.
    fn embed(&self, video_id: &str, time_s: f64) -> Result<Vec<f64>, PortError>;

    fn describe(&self, video_id: &str, interval: &TemporalInterval) -> Result<String, PortError>;

    fn ping(&self) -> Result<(), PortError> {
        Ok(())
    }
}

impl<T: LlmPort + ?Sized> LlmPort for Arc<T> {
    fn complete(&self, system: &str, user: &str) -> Result<String, PortError> {
        (**self).complete(system, user)
    }
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, PortError> {
        (**self).embed_text(text)
    }
    fn ping(&self) -> Result<(), PortError> {
        (**self).ping()
    }
}

impl<T: VisionPort + ?Sized> VisionPort for Arc<T> {
    fn embed(&self, video_id: &str, time_s: f64) -> Result<Vec<f64>, PortError> {
        (**self).embed(video_id, time_s)
    }
    fn describe(&self, video_id: &str, interval: &TemporalInterval) -> Result<String, PortError> {
        (**self).describe(video_id, interval)
    }
    fn ping(&self) -> Result<(), PortError> {
        (**self).ping()
    }
}

/// The pair of ports a session talks to.
#[derive(Clone)]
pub struct Ports {
    pub llm: Arc<dyn LlmPort>,
    pub vision: Arc<dyn VisionPort>,
}

impl Ports {
    pub fn new(llm: Arc<dyn LlmPort>, vision: Arc<dyn VisionPort>) -> Self {
        Ports { llm, vision }
    }
}

impl std::fmt::Debug for Ports {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ports").finish_non_exhaustive()
    }
}
