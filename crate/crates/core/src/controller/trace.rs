//! Session trace: a header line followed by one JSON record per step.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Query, TemporalInterval, VideoDescriptor};

use super::SessionConfig;

pub const ENGINE_TAG: &str = concat!("qtr-core/", env!("CARGO_PKG_VERSION"));
pub const TRACE_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    Proposal,
    Validation,
    Evidence,
    Answer,
    Alignment,
    MemoryUpdate,
    Termination,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("record kind serializes");
        f.write_str(v.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub kind: String,
    pub engine: String,
    pub format: u32,
    pub query: Query,
    pub video: VideoDescriptor,
    pub config: SessionConfig,
}

impl TraceHeader {
    pub fn new(query: &Query, video: &VideoDescriptor, config: &SessionConfig) -> Self {
        TraceHeader {
            kind: "header".into(),
            engine: ENGINE_TAG.into(),
            format: TRACE_FORMAT,
            query: query.clone(),
            video: video.clone(),
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u32,
    pub kind: RecordKind,
    pub payload: Value,
    pub wall_ms: u64,
}

/// One port interaction. Prompts are stored as digests; replies in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "port", rename_all = "kebab-case")]
pub enum PortCall {
    Complete {
        system_sha256: String,
        user_sha256: String,
        reply: String,
    },
    EmbedText {
        text: String,
        vector: Vec<f64>,
    },
    Embed {
        video_id: String,
        time_s: f64,
        vector: Vec<f64>,
    },
    Describe {
        video_id: String,
        interval: TemporalInterval,
        text: String,
    },
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

#[derive(Serialize)]
struct HashedRecord<'a> {
    iteration: u32,
    kind: RecordKind,
    payload: &'a Value,
}

impl SessionTrace {
    pub fn new(header: TraceHeader) -> Self {
        SessionTrace { header, records: Vec::new() }
    }

    /// SHA-256 over the header and every record with `wall_ms` left out.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.header).expect("header serializes"));
        for r in &self.records {
            h.update(b"\n");
            let rec = HashedRecord {
                iteration: r.iteration,
                kind: r.kind,
                payload: &r.payload,
            };
            h.update(serde_json::to_vec(&rec).expect("record serializes"));
        }
        hex::encode(h.finalize())
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines.next().unwrap_or("");
        let header: TraceHeader = serde_json::from_str(header_line)?;
        let records = lines.map(serde_json::from_str).collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(SessionTrace { header, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_ndjson()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_ndjson(&text).map_err(|e| Error::format(path, e))
    }

    /// Every recorded port call, in order.
    pub fn port_calls(&self) -> std::result::Result<Vec<PortCall>, serde_json::Error> {
        let mut calls = Vec::new();
        for r in &self.records {
            if let Some(list) = r.payload.get("calls") {
                calls.extend(serde_json::from_value::<Vec<PortCall>>(list.clone())?);
            }
        }
        Ok(calls)
    }
}
