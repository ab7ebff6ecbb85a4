//! Shared domain types: videos, intervals, queries, episodes, confidence and budgets.
//!
//! Every type here is an immutable value with a canonical JSON encoding whose
//! field names are part of the trace and world-file formats.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Intersection length (seconds) above which a candidate counts as re-reviewing.
pub const OVERLAP_TOLERANCE_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("video {id}: {reason}")]
    InvalidVideo { id: String, reason: String },
    #[error("interval [{start}, {end}] is not strictly ordered")]
    InvalidInterval { start: f64, end: f64 },
    #[error("query: {0}")]
    InvalidQuery(String),
    #[error("confidence score {0} outside 1..=100")]
    ScoreOutOfRange(i64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoDescriptor {
    pub id: String,
    pub duration_s: f64,
    pub fps: f64,
    pub frame_count: u64,
}

impl VideoDescriptor {
    /// Builds a descriptor whose frame count covers both timeline endpoints,
    /// i.e. `floor(duration * fps) + 1` frames.
    pub fn new(id: impl Into<String>, duration_s: f64, fps: f64) -> Result<Self, ModelError> {
        let frame_count = if duration_s.is_finite() && fps.is_finite() && duration_s > 0.0 && fps > 0.0 {
            (duration_s * fps).floor() as u64 + 1
        } else {
            0
        };
        let video = VideoDescriptor {
            id: id.into(),
            duration_s,
            fps,
            frame_count,
        };
        video.validate()?;
        Ok(video)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: &str| {
            Err(ModelError::InvalidVideo {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return fail("duration_s must be positive");
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return fail("fps must be positive");
        }
        if self.frame_count == 0 {
            return fail("frame_count must be positive");
        }
        let expected = (self.duration_s * self.fps).floor();
        if (self.frame_count as f64 - expected).abs() > 1.0 {
            return fail("frame_count inconsistent with duration_s * fps");
        }
        Ok(())
    }

    /// Frame index addressed by a timestamp: `round(time * fps)`.
    pub fn frame_index(&self, time_s: f64) -> u64 {
        (time_s * self.fps).round().max(0.0) as u64
    }

    pub fn timeline(&self) -> TemporalInterval {
        TemporalInterval::new(0.0, self.duration_s)
    }
}

/// A closed time span in seconds. Construction does not enforce ordering so
/// that unvalidated proposals can be represented; see [`validate_interval`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalInterval {
    pub start_s: f64,
    pub end_s: f64,
}

impl TemporalInterval {
    pub const fn new(start_s: f64, end_s: f64) -> Self {
        TemporalInterval { start_s, end_s }
    }

    pub fn try_new(start_s: f64, end_s: f64) -> Result<Self, ModelError> {
        if start_s.is_finite() && end_s.is_finite() && end_s > start_s && start_s >= 0.0 {
            Ok(Self::new(start_s, end_s))
        } else {
            Err(ModelError::InvalidInterval { start: start_s, end: end_s })
        }
    }

    pub fn len(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start_s + self.end_s)
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.start_s && t <= self.end_s
    }

    pub fn contains(&self, other: &TemporalInterval) -> bool {
        other.start_s >= self.start_s && other.end_s <= self.end_s
    }

    /// Length of the intersection, zero when disjoint or touching.
    pub fn intersection_len(&self, other: &TemporalInterval) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }

    pub fn union(&self, other: &TemporalInterval) -> TemporalInterval {
        TemporalInterval::new(self.start_s.min(other.start_s), self.end_s.max(other.end_s))
    }

    pub fn is_finite(&self) -> bool {
        self.start_s.is_finite() && self.end_s.is_finite()
    }
}

impl fmt::Display for TemporalInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", fmt_seconds(self.start_s), fmt_seconds(self.end_s))
    }
}

/// Formats seconds without a trailing `.0` for whole values and with at most
/// three decimals otherwise.
pub fn fmt_seconds(t: f64) -> String {
    if (t - t.round()).abs() < 1e-9 {
        format!("{}", t.round() as i64)
    } else {
        let s = format!("{t:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOption {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<QueryOption>,
    pub video: String,
}

impl Query {
    pub fn new(text: impl Into<String>, video: impl Into<String>) -> Self {
        Query {
            text: text.into(),
            options: Vec::new(),
            video: video.into(),
        }
    }

    pub fn with_options(mut self, options: impl IntoIterator<Item = (String, String)>) -> Self {
        self.options = options
            .into_iter()
            .map(|(label, text)| QueryOption { label, text })
            .collect();
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.text.trim().is_empty() {
            return Err(ModelError::InvalidQuery("text must be non-empty".into()));
        }
        let mut labels: Vec<&str> = self.options.iter().map(|o| o.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(ModelError::InvalidQuery("option labels must be unique".into()));
        }
        Ok(())
    }

    /// Question text with its options inlined, as placed in prompts.
    pub fn formatted(&self) -> String {
        if self.options.is_empty() {
            return self.text.clone();
        }
        let opts: Vec<String> = self
            .options
            .iter()
            .map(|o| format!("{}. {}", o.label, o.text))
            .collect();
        format!("{} Options: {}", self.text, opts.join("; "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpisodeOrigin {
    Planned,
    Refined,
    RandomAblation,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningEpisode {
    pub iteration: u32,
    pub intent: String,
    pub interval: TemporalInterval,
    pub origin: EpisodeOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceBand {
    Low,
    Medium,
    High,
}

impl ConfidenceBand {
    pub fn for_score(score: u8) -> Self {
        match score {
            90..=100 => ConfidenceBand::High,
            40..=89 => ConfidenceBand::Medium,
            _ => ConfidenceBand::Low,
        }
    }
}

impl fmt::Display for ConfidenceBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceBand::Low => "low",
            ConfidenceBand::Medium => "medium",
            ConfidenceBand::High => "high",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confidence {
    pub score: u8,
    pub band: ConfidenceBand,
}

/// Maps a 1..=100 score onto the low / medium / high rubric.
pub fn confidence_from_score(score: i64) -> Result<Confidence, ModelError> {
    if !(1..=100).contains(&score) {
        return Err(ModelError::ScoreOutOfRange(score));
    }
    let score = score as u8;
    Ok(Confidence {
        score,
        band: ConfidenceBand::for_score(score),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAnswer {
    pub answer: String,
    pub reason: String,
    pub summary: String,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetConfig {
    pub max_iterations: u32,
    pub max_segment_s: f64,
    pub max_total_frames: u64,
    pub retry_limit: u32,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            max_iterations: 12,
            max_segment_s: 180.0,
            max_total_frames: 256,
            retry_limit: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Inverted,
    TooLong,
    OutOfRange,
    WholeVideo,
    AlreadyReviewed,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::Inverted => "the end_time must be greater than the start_time",
            RejectReason::TooLong => "the segment exceeds the maximum allowed duration",
            RejectReason::OutOfRange => "the segment lies outside the video timeline",
            RejectReason::WholeVideo => "the segment selects the entire video",
            RejectReason::AlreadyReviewed => "the segment overlaps a previously reviewed segment",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "verdict", content = "reason")]
pub enum ValidationVerdict {
    Accepted,
    Rejected(RejectReason),
}

impl ValidationVerdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, ValidationVerdict::Accepted)
    }
}

/// Checks a candidate segment against the proposal constraints.
///
/// Rejections are reported in a fixed precedence: inverted, whole-video,
/// too-long, out-of-range, already-reviewed. Whole-video is tested before the
/// length cap so that `[0, duration]` reports the more specific reason.
pub fn validate_interval(
    candidate: &TemporalInterval,
    video: &VideoDescriptor,
    reviewed: &[TemporalInterval],
    cfg: &BudgetConfig,
) -> ValidationVerdict {
    use RejectReason::*;
    let reject = ValidationVerdict::Rejected;
    if !candidate.is_finite() {
        return reject(OutOfRange);
    }
    if candidate.end_s <= candidate.start_s {
        return reject(Inverted);
    }
    if candidate.start_s <= 0.0 && candidate.end_s >= video.duration_s {
        return reject(WholeVideo);
    }
    if candidate.len() > cfg.max_segment_s {
        return reject(TooLong);
    }
    if candidate.start_s < 0.0 || candidate.end_s > video.duration_s {
        return reject(OutOfRange);
    }
    if reviewed
        .iter()
        .any(|r| r.intersection_len(candidate) > OVERLAP_TOLERANCE_S)
    {
        return reject(AlreadyReviewed);
    }
    ValidationVerdict::Accepted
}

/// Maximal sub-spans of `[0, duration]` not covered by any reviewed interval,
/// in timeline order. Spans shorter than `min_len` are dropped.
pub fn unreviewed_gaps(duration_s: f64, reviewed: &[TemporalInterval], min_len: f64) -> Vec<TemporalInterval> {
    let mut covered: Vec<TemporalInterval> = reviewed
        .iter()
        .filter(|r| r.is_finite() && r.end_s > r.start_s)
        .map(|r| TemporalInterval::new(r.start_s.max(0.0), r.end_s.min(duration_s)))
        .filter(|r| r.end_s > r.start_s)
        .collect();
    covered.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut gaps = Vec::new();
    let mut cursor = 0.0;
    for r in covered {
        if r.start_s > cursor {
            gaps.push(TemporalInterval::new(cursor, r.start_s));
        }
        cursor = cursor.max(r.end_s);
    }
    if duration_s > cursor {
        gaps.push(TemporalInterval::new(cursor, duration_s));
    }
    gaps.retain(|g| g.len() >= min_len);
    gaps
}

/// Total length of the union of `intervals`.
pub fn union_length(intervals: &[TemporalInterval]) -> f64 {
    let mut sorted: Vec<TemporalInterval> = intervals.iter().copied().filter(|i| i.len() > 0.0).collect();
    sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut total = 0.0;
    let mut current: Option<TemporalInterval> = None;
    for i in sorted {
        match current {
            Some(c) if i.start_s <= c.end_s => current = Some(c.union(&i)),
            Some(c) => {
                total += c.len();
                current = Some(i);
            }
            None => current = Some(i),
        }
    }
    total + current.map_or(0.0, |c| c.len())
}
