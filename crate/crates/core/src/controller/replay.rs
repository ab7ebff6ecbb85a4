//! Port wrappers that record every call for the trace, and ports that serve
//! recorded replies back during replay.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use super::trace::{sha256_hex, PortCall};
use crate::backends::{LlmPort, PortError, VisionPort};
use crate::model::TemporalInterval;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("trace engine tag {found} does not match {expected}")]
    VersionMismatch { expected: String, found: String },
    #[error("trace truncated: record {record} (iteration {iteration}, {kind}) is missing")]
    Truncated { record: usize, iteration: u32, kind: String },
    #[error("replay diverged from the trace: {0}")]
    Divergence(String),
    #[error("malformed trace: {0}")]
    Malformed(String),
}

pub(crate) type CallLog = Arc<Mutex<Vec<PortCall>>>;

pub(crate) fn drain(log: &CallLog) -> Vec<PortCall> {
    std::mem::take(&mut *log.lock().expect("call log poisoned"))
}

pub(crate) struct RecordingLlm {
    pub inner: Arc<dyn LlmPort>,
    pub log: CallLog,
}

impl LlmPort for RecordingLlm {
    fn complete(&self, system: &str, user: &str) -> Result<String, PortError> {
        let reply = self.inner.complete(system, user)?;
        self.log.lock().expect("call log poisoned").push(PortCall::Complete {
            system_sha256: sha256_hex(system),
            user_sha256: sha256_hex(user),
            reply: reply.clone(),
        });
        Ok(reply)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, PortError> {
        let vector = self.inner.embed_text(text)?;
        self.log.lock().expect("call log poisoned").push(PortCall::EmbedText {
            text: text.to_string(),
            vector: vector.clone(),
        });
        Ok(vector)
    }

    fn ping(&self) -> Result<(), PortError> {
        self.inner.ping()
    }
}

pub(crate) struct RecordingVision {
    pub inner: Arc<dyn VisionPort>,
    pub log: CallLog,
}

impl VisionPort for RecordingVision {
    fn embed(&self, video_id: &str, time_s: f64) -> Result<Vec<f64>, PortError> {
        let vector = self.inner.embed(video_id, time_s)?;
        self.log.lock().expect("call log poisoned").push(PortCall::Embed {
            video_id: video_id.to_string(),
            time_s,
            vector: vector.clone(),
        });
        Ok(vector)
    }

    fn describe(&self, video_id: &str, interval: &TemporalInterval) -> Result<String, PortError> {
        let text = self.inner.describe(video_id, interval)?;
        self.log.lock().expect("call log poisoned").push(PortCall::Describe {
            video_id: video_id.to_string(),
            interval: *interval,
            text: text.clone(),
        });
        Ok(text)
    }

    fn ping(&self) -> Result<(), PortError> {
        self.inner.ping()
    }
}

/// Recorded calls served in order to both replay ports.
#[derive(Clone)]
pub(crate) struct ReplayQueue {
    calls: Arc<Mutex<VecDeque<PortCall>>>,
}

impl ReplayQueue {
    pub fn new(calls: Vec<PortCall>) -> Self {
        ReplayQueue {
            calls: Arc::new(Mutex::new(calls.into())),
        }
    }

    pub fn remaining(&self) -> usize {
        self.calls.lock().expect("replay queue poisoned").len()
    }

    fn next(&self, what: &str) -> Result<PortCall, PortError> {
        self.calls
            .lock()
            .expect("replay queue poisoned")
            .pop_front()
            .ok_or_else(|| PortError::ReplayMissing(what.to_string()))
    }
}

fn diverged(expected: &PortCall, what: &str) -> PortError {
    let kind = match expected {
        PortCall::Complete { .. } => "complete",
        PortCall::EmbedText { .. } => "embed-text",
        PortCall::Embed { .. } => "embed",
        PortCall::Describe { .. } => "describe",
    };
    PortError::ReplayDivergence(format!("trace has a {kind} call where the session made {what}"))
}

impl LlmPort for ReplayQueue {
    fn complete(&self, system: &str, user: &str) -> Result<String, PortError> {
        let what = "a complete call";
        match self.next(what)? {
            PortCall::Complete {
                system_sha256,
                user_sha256,
                reply,
            } if system_sha256 == sha256_hex(system) && user_sha256 == sha256_hex(user) => Ok(reply),
            other => Err(diverged(&other, what)),
        }
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, PortError> {
        let what = "an embed-text call";
        match self.next(what)? {
            PortCall::EmbedText { text: t, vector } if t == text => Ok(vector),
            other => Err(diverged(&other, what)),
        }
    }
}

impl VisionPort for ReplayQueue {
    fn embed(&self, video_id: &str, time_s: f64) -> Result<Vec<f64>, PortError> {
        let what = "an embed call";
        match self.next(what)? {
            PortCall::Embed {
                video_id: v,
                time_s: t,
                vector,
            } if v == video_id && t.to_bits() == time_s.to_bits() => Ok(vector),
            other => Err(diverged(&other, what)),
        }
    }

    fn describe(&self, video_id: &str, interval: &TemporalInterval) -> Result<String, PortError> {
        let what = "a describe call";
        match self.next(what)? {
            PortCall::Describe {
                video_id: v,
                interval: i,
                text,
            } if v == video_id && i == *interval => Ok(text),
            other => Err(diverged(&other, what)),
        }
    }
}
