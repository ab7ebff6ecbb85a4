//! Call-counting port wrappers.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{LlmPort, PortError, VisionPort};
use crate::model::TemporalInterval;

/// Wraps a vision port and counts `embed` and `describe` calls.
pub struct CountingVision<V> {
    inner: V,
    embeds: Arc<AtomicU64>,
    describes: Arc<AtomicU64>,
}

impl<V: VisionPort> CountingVision<V> {
    pub fn new(inner: V) -> Self {
        CountingVision {
            inner,
            embeds: Arc::new(AtomicU64::new(0)),
            describes: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn embed_calls(&self) -> u64 {
        self.embeds.load(Ordering::SeqCst)
    }

    pub fn describe_calls(&self) -> u64 {
        self.describes.load(Ordering::SeqCst)
    }

    /// Shared handle on the embed counter, usable after the port is moved.
    pub fn embed_counter(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.embeds)
    }
}

impl<V: VisionPort> VisionPort for CountingVision<V> {
    fn embed(&self, video_id: &str, time_s: f64) -> Result<Vec<f64>, PortError> {
        self.embeds.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(video_id, time_s)
    }

    fn describe(&self, video_id: &str, interval: &TemporalInterval) -> Result<String, PortError> {
        self.describes.fetch_add(1, Ordering::SeqCst);
        self.inner.describe(video_id, interval)
    }

    fn ping(&self) -> Result<(), PortError> {
        self.inner.ping()
    }
}

/// Wraps an LLM port and counts completion and embedding calls.
pub struct CountingLlm<L> {
    inner: L,
    completions: AtomicU64,
    text_embeds: AtomicU64,
}

impl<L: LlmPort> CountingLlm<L> {
    pub fn new(inner: L) -> Self {
        CountingLlm {
            inner,
            completions: AtomicU64::new(0),
            text_embeds: AtomicU64::new(0),
        }
    }

    pub fn completion_calls(&self) -> u64 {
        self.completions.load(Ordering::SeqCst)
    }

    pub fn embed_text_calls(&self) -> u64 {
        self.text_embeds.load(Ordering::SeqCst)
    }
}

impl<L: LlmPort> LlmPort for CountingLlm<L> {
    fn complete(&self, system: &str, user: &str) -> Result<String, PortError> {
        self.completions.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(system, user)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, PortError> {
        self.text_embeds.fetch_add(1, Ordering::SeqCst);
        self.inner.embed_text(text)
    }

    fn ping(&self) -> Result<(), PortError> {
        self.inner.ping()
    }
}
