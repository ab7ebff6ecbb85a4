//! Deterministic scripted world: synthetic videos made of timed events, a
//! keyword lexicon for text embeddings, and rule-driven LLM behaviour.
//!
//! The scripted LLM recognises the two prompt families the engine sends
//! (segment planning and answering) by their opening sentence and replies
//! from the world definition. Everything is a pure function of the world and
//! the request, so sessions over scripted ports are reproducible.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LlmPort, PortError, VisionPort};
use crate::model::{fmt_seconds, unreviewed_gaps, ModelError, TemporalInterval, VideoDescriptor};
use crate::vector::{dot, norm, normalized};

pub const PLANNER_PROMPT_MARKER: &str = "You are an intelligent video analyst.";
pub const ANSWER_PROMPT_MARKER: &str = "You are an expert video analyst.";

const DEFAULT_NOISE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedEvent {
    pub id: String,
    pub interval: TemporalInterval,
    pub description: String,
    /// What a clip shows when it only grazes the event without covering its midpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glimpse: Option<String>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedVideo {
    pub descriptor: VideoDescriptor,
    pub events: Vec<ScriptedEvent>,
    pub background_embedding: Vec<f64>,
    #[serde(default = "default_background_description")]
    pub background_description: String,
}

fn default_background_description() -> String {
    "uneventful background footage".to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerPolicy {
    /// Heads for the most query-similar unreviewed event, then the middle of
    /// the largest gap.
    #[default]
    Competent,
    WholeVideo,
    Garbage,
    Overlong,
    Inverted,
    Rereview,
    RandomArray,
    /// Picks one of the policies above per prompt, keyed on the prompt hash.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRule {
    /// All substrings must occur in the (lowercased) question.
    pub question_contains: Vec<String>,
    /// All substrings must occur in the clip description or the history record.
    pub requires: Vec<String>,
    pub answer: String,
    pub reason: String,
    pub confidence: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmPolicy {
    pub planner: PlannerPolicy,
    /// Per-event shift (seconds) between where the planner believes an event
    /// is and where it actually is.
    pub planner_offsets: BTreeMap<String, f64>,
    /// Minimum cosine similarity for an event to be considered query-relevant.
    pub relevance_threshold: f64,
    pub answer_rules: Vec<AnswerRule>,
}

impl Default for LlmPolicy {
    fn default() -> Self {
        LlmPolicy {
            planner: PlannerPolicy::Competent,
            planner_offsets: BTreeMap::new(),
            relevance_threshold: 0.2,
            answer_rules: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedWorld {
    pub name: String,
    pub videos: Vec<ScriptedVideo>,
    pub lexicon: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub llm_policy: LlmPolicy,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default = "default_noise")]
    pub noise_magnitude: f64,
}

fn default_noise() -> f64 {
    DEFAULT_NOISE
}

pub(crate) fn hash64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

impl ScriptedWorld {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dim = self.dim();
        let bad = |id: &str, reason: String| Err(ModelError::InvalidVideo { id: id.to_string(), reason });
        for video in &self.videos {
            video.descriptor.validate()?;
            let id = &video.descriptor.id;
            if video.background_embedding.len() != dim {
                return bad(id, "background embedding dimension mismatch".into());
            }
            for ev in &video.events {
                if !(ev.interval.end_s > ev.interval.start_s
                    && ev.interval.start_s >= 0.0
                    && ev.interval.end_s <= video.descriptor.duration_s)
                {
                    return bad(id, format!("event {} lies outside the video", ev.id));
                }
                if ev.embedding.len() != dim {
                    return bad(id, format!("event {} embedding dimension mismatch", ev.id));
                }
            }
        }
        if let Some((word, _)) = self.lexicon.iter().find(|(_, v)| v.len() != dim) {
            return bad(&self.name, format!("lexicon entry {word} dimension mismatch"));
        }
        Ok(())
    }

    /// Embedding dimension shared by frames, events and the lexicon.
    pub fn dim(&self) -> usize {
        self.videos
            .first()
            .map(|v| v.background_embedding.len())
            .or_else(|| self.lexicon.values().next().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn video(&self, video_id: &str) -> Result<&ScriptedVideo, PortError> {
        self.videos
            .iter()
            .find(|v| v.descriptor.id == video_id)
            .ok_or_else(|| PortError::UnknownVideo(video_id.to_string()))
    }

    /// Frame embedding at `time_s`: the covering event's embedding (latest
    /// start wins on overlap) or the background, plus deterministic per-frame
    /// noise of norm at most `noise_magnitude`.
    pub fn scripted_embed(&self, video_id: &str, time_s: f64) -> Result<Vec<f64>, PortError> {
        let video = self.video(video_id)?;
        let base = video
            .events
            .iter()
            .filter(|e| e.interval.contains_time(time_s))
            .max_by(|a, b| a.interval.start_s.total_cmp(&b.interval.start_s))
            .map_or(&video.background_embedding, |e| &e.embedding);
        let frame = video.descriptor.frame_index(time_s);
        let seed = hash64(&[
            &self.noise_seed.to_le_bytes(),
            video_id.as_bytes(),
            &frame.to_le_bytes(),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = base.len().max(1) as f64;
        let scale = self.noise_magnitude / dim.sqrt();
        Ok(base
            .iter()
            .map(|x| x + scale * rng.gen_range(-1.0..=1.0))
            .collect())
    }

    /// Description of a clip: full descriptions of events whose midpoint the
    /// clip covers, glimpse text for events it only grazes.
    pub fn describe(&self, video_id: &str, interval: &TemporalInterval) -> Result<String, PortError> {
        let video = self.video(video_id)?;
        let mut events: Vec<&ScriptedEvent> = video.events.iter().collect();
        events.sort_by(|a, b| a.interval.start_s.total_cmp(&b.interval.start_s));
        let parts: Vec<&str> = events
            .into_iter()
            .filter(|e| e.interval.intersection_len(interval) > 0.0)
            .filter_map(|e| {
                if interval.contains_time(e.interval.center()) {
                    Some(e.description.as_str())
                } else {
                    e.glimpse.as_deref()
                }
            })
            .collect();
        if parts.is_empty() {
            Ok(video.background_description.clone())
        } else {
            Ok(parts.join("; "))
        }
    }

    /// Sum of lexicon vectors for the words in `text`, unit-normalised. Text
    /// with no lexicon words maps to a hash-seeded pseudo-random unit vector.
    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let dim = self.dim();
        let mut acc = vec![0.0; dim];
        let mut hit = false;
        for w in words(text) {
            if let Some(v) = self.lexicon.get(&w) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
                hit = true;
            }
        }
        if !hit || norm(&acc) == 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(hash64(&[b"text", text.as_bytes()]));
            acc = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        }
        normalized(&acc)
    }

    /// Reply of the scripted planner to a segment-planning prompt.
    pub fn scripted_planner_policy(
        &self,
        video_id: &str,
        policy: PlannerPolicy,
        system: &str,
        user: &str,
    ) -> Result<String, PortError> {
        let video = self.video(video_id)?;
        let duration = parse_duration(user).unwrap_or(video.descriptor.duration_s);
        let reviewed = parse_reviewed(system);
        let cap = parse_cap(user).unwrap_or(180.0);
        let seed = hash64(&[&self.noise_seed.to_le_bytes(), system.as_bytes(), user.as_bytes()]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let policy = if policy == PlannerPolicy::Adversarial {
            const CHOICES: [PlannerPolicy; 7] = [
                PlannerPolicy::Competent,
                PlannerPolicy::WholeVideo,
                PlannerPolicy::Garbage,
                PlannerPolicy::Overlong,
                PlannerPolicy::Inverted,
                PlannerPolicy::Rereview,
                PlannerPolicy::RandomArray,
            ];
            CHOICES[rng.gen_range(0..CHOICES.len())]
        } else {
            policy
        };
        let d = fmt_seconds(duration);
        let reply = match policy {
            PlannerPolicy::WholeVideo => format!("[0, {d}]"),
            PlannerPolicy::Garbage => "I would watch minute 3, it looks promising.".to_string(),
            PlannerPolicy::Overlong => {
                let start = (rng.gen_range(0.0..duration * 0.5)).floor();
                format!("[{}, {}]", fmt_seconds(start), fmt_seconds(start + cap + 60.0))
            }
            PlannerPolicy::Inverted => {
                let start = (rng.gen_range(0.0..duration * 0.5)).floor();
                format!("[{}, {}]", fmt_seconds(start + 30.0), fmt_seconds(start))
            }
            PlannerPolicy::Rereview => match reviewed.first() {
                Some(r) => format!("[{}, {}]", fmt_seconds(r.start_s), fmt_seconds(r.end_s)),
                None => format!("[0, {d}]"),
            },
            PlannerPolicy::RandomArray => {
                let lo = -0.2 * duration;
                let hi = 1.2 * duration;
                let a = rng.gen_range(lo..hi).round();
                let b = rng.gen_range(lo..hi).round();
                match rng.gen_range(0..4) {
                    0 => format!("[{a}, {b}]"),
                    1 => format!("Sure! Here it is: ```[{a}, {b}]```"),
                    2 => format!("[{a}, {b}, {}]", rng.gen_range(0..100)),
                    _ => format!("[{a}, \"later\"]"),
                }
            }
            PlannerPolicy::Competent | PlannerPolicy::Adversarial => {
                let question = parse_question(user).unwrap_or_default();
                self.competent_window(video, &question, duration, cap, &reviewed)
                    .map(|w| format!("[{}, {}]", fmt_seconds(w.start_s), fmt_seconds(w.end_s)))
                    .unwrap_or_else(|| "No unreviewed segment remains.".to_string())
            }
        };
        Ok(reply)
    }

    fn competent_window(
        &self,
        video: &ScriptedVideo,
        question: &str,
        duration: f64,
        cap: f64,
        reviewed: &[TemporalInterval],
    ) -> Option<TemporalInterval> {
        let q = self.embed_text(question);
        let mut ranked: Vec<(f64, &ScriptedEvent)> = video
            .events
            .iter()
            .map(|e| (cosine(&e.embedding, &q), e))
            .filter(|(s, _)| *s > self.llm_policy.relevance_threshold)
            .collect();
        ranked.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.interval.start_s.total_cmp(&b.1.interval.start_s))
        });
        for (_, ev) in ranked {
            let offset = self.llm_policy.planner_offsets.get(&ev.id).copied().unwrap_or(0.0);
            let believed_center = (ev.interval.center() + offset).clamp(0.0, duration);
            if reviewed.iter().any(|r| r.contains_time(believed_center)) {
                continue;
            }
            if let Some(w) = place_window(believed_center, reviewed, cap, duration) {
                return Some(w);
            }
        }
        let gaps = unreviewed_gaps(duration, reviewed, 2.0);
        // No lead left: probe the middle of the largest unexplored stretch.
        let largest = gaps.iter().max_by(|a, b| a.len().total_cmp(&b.len()))?;
        place_window(largest.center(), reviewed, cap, duration)
    }

    /// Reply of the scripted answering agent: the first rule whose question
    /// patterns and required evidence are all present wins.
    pub fn scripted_answer_policy(&self, user: &str) -> String {
        let question = parse_question(user).unwrap_or_default().to_lowercase();
        let clip = parse_clip(user).unwrap_or_default();
        let history = parse_history(user).unwrap_or_default();
        let evidence = format!("{clip}\n{history}").to_lowercase();
        let rule = self.llm_policy.answer_rules.iter().find(|r| {
            r.question_contains.iter().all(|p| question.contains(&p.to_lowercase()))
                && r.requires.iter().all(|p| evidence.contains(&p.to_lowercase()))
        });
        let (answer, reason, score) = match rule {
            Some(r) => (r.answer.clone(), r.reason.clone(), r.confidence),
            None => (
                "Cannot be determined from the clip".to_string(),
                "The clip does not show anything related to the question.".to_string(),
                15,
            ),
        };
        format!(
            "Answer: {answer}\nReason: {reason}\nSummary of this content: {clip}\nConfidence Score: {score}"
        )
    }
}

/// Window of length at most `cap` centred as close to `center` as the
/// unreviewed gap containing it allows. Never spans the entire video.
pub fn place_window(
    center: f64,
    reviewed: &[TemporalInterval],
    cap: f64,
    duration: f64,
) -> Option<TemporalInterval> {
    let gaps = unreviewed_gaps(duration, reviewed, 0.0);
    let gap = gaps
        .iter()
        .find(|g| g.contains_time(center))
        .or_else(|| {
            gaps.iter()
                .min_by(|a, b| distance_to(a, center).total_cmp(&distance_to(b, center)))
        })?;
    let mut len = cap.min(gap.len());
    if gap.start_s <= 0.0 && gap.end_s >= duration {
        len = len.min(duration - 1.0);
    }
    let start = (center - len / 2.0).clamp(gap.start_s, gap.end_s - len);
    let s = (start * 10.0).ceil() / 10.0;
    let e = ((start + len) * 10.0).floor() / 10.0;
    (e - s >= 1.0).then(|| TemporalInterval::new(s, e))
}

fn distance_to(i: &TemporalInterval, t: f64) -> f64 {
    if i.contains_time(t) {
        0.0
    } else {
        (i.start_s - t).abs().min((i.end_s - t).abs())
    }
}

fn parse_question(user: &str) -> Option<String> {
    let line = user.lines().find(|l| l.contains("Question: \""))?;
    let start = line.find("Question: \"")? + "Question: \"".len();
    let end = line.rfind('"')?;
    (end > start).then(|| line[start..end].to_string())
}

fn parse_clip(user: &str) -> Option<String> {
    let line = user.lines().find(|l| l.trim_start().starts_with("- Video Clip:"))?;
    Some(line.trim_start().trim_start_matches("- Video Clip:").trim().to_string())
}

fn parse_history(user: &str) -> Option<String> {
    let start = user.find("- History Record:")? + "- History Record:".len();
    let rest = &user[start..];
    let end = rest.find("\nTask:").unwrap_or(rest.len());
    Some(rest[..end].trim().to_string())
}

fn number_after(text: &str, marker: &str) -> Option<f64> {
    let start = text.find(marker)? + marker.len();
    let tail = text[start..].trim_start();
    let end = tail
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .unwrap_or(tail.len());
    tail[..end].parse().ok()
}

fn parse_duration(user: &str) -> Option<f64> {
    number_after(user, "Total Video Duration:")
}

fn parse_cap(user: &str) -> Option<f64> {
    number_after(user, "must NOT exceed")
}

/// All `[a, b]` pairs after the reviewed-segments marker of a planning prompt.
fn parse_reviewed(system: &str) -> Vec<TemporalInterval> {
    let Some(pos) = system.find("already analyzed:") else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut rest = &system[pos..];
    while let Some(open) = rest.find('[') {
        let Some(close) = rest[open..].find(']') else { break };
        let body = &rest[open + 1..open + close];
        let nums: Vec<f64> = body.split(',').filter_map(|p| p.trim().parse().ok()).collect();
        if nums.len() == 2 {
            out.push(TemporalInterval::new(nums[0], nums[1]));
        }
        rest = &rest[open + close + 1..];
    }
    out
}

/// Scripted LLM bound to one video of a world.
#[derive(Clone)]
pub struct ScriptedLlm {
    world: Arc<ScriptedWorld>,
    video_id: String,
    planner: PlannerPolicy,
}

impl ScriptedLlm {
    pub fn new(world: Arc<ScriptedWorld>, video_id: impl Into<String>) -> Self {
        let planner = world.llm_policy.planner;
        ScriptedLlm {
            world,
            video_id: video_id.into(),
            planner,
        }
    }

    pub fn with_planner_policy(mut self, policy: PlannerPolicy) -> Self {
        self.planner = policy;
        self
    }
}

impl LlmPort for ScriptedLlm {
    fn complete(&self, system: &str, user: &str) -> Result<String, PortError> {
        if system.starts_with(PLANNER_PROMPT_MARKER) {
            self.world
                .scripted_planner_policy(&self.video_id, self.planner, system, user)
        } else if system.starts_with(ANSWER_PROMPT_MARKER) {
            Ok(self.world.scripted_answer_policy(user))
        } else {
            Ok("I can only help with video analysis prompts.".to_string())
        }
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, PortError> {
        Ok(self.world.embed_text(text))
    }
}

/// Scripted vision encoder over every video of a world.
#[derive(Clone)]
pub struct ScriptedVision {
    world: Arc<ScriptedWorld>,
}

impl ScriptedVision {
    pub fn new(world: Arc<ScriptedWorld>) -> Self {
        ScriptedVision { world }
    }
}

impl VisionPort for ScriptedVision {
    fn embed(&self, video_id: &str, time_s: f64) -> Result<Vec<f64>, PortError> {
        self.world.scripted_embed(video_id, time_s)
    }

    fn describe(&self, video_id: &str, interval: &TemporalInterval) -> Result<String, PortError> {
        self.world.describe(video_id, interval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    fn world() -> ScriptedWorld {
        let dim = 4;
        let video = ScriptedVideo {
            descriptor: VideoDescriptor::new("v", 600.0, 1.0).unwrap(),
            events: vec![
                ScriptedEvent {
                    id: "a".into(),
                    interval: TemporalInterval::new(400.0, 430.0),
                    description: "a red kite rises".into(),
                    glimpse: Some("something red at the edge".into()),
                    embedding: unit(dim, 1),
                },
                ScriptedEvent {
                    id: "b".into(),
                    interval: TemporalInterval::new(420.0, 440.0),
                    description: "a dog barks".into(),
                    glimpse: None,
                    embedding: unit(dim, 2),
                },
            ],
            background_embedding: unit(dim, 0),
            background_description: "empty field".into(),
        };
        let mut lexicon = BTreeMap::new();
        lexicon.insert("kite".to_string(), unit(dim, 1));
        lexicon.insert("dog".to_string(), unit(dim, 2));
        ScriptedWorld {
            name: "w".into(),
            videos: vec![video],
            lexicon,
            llm_policy: LlmPolicy::default(),
            noise_seed: 3,
            noise_magnitude: 1e-3,
        }
    }

    #[test]
    fn embed_lookup_rules() {
        let w = world();
        let inside = w.scripted_embed("v", 410.0).unwrap();
        assert!(crate::vector::squared_distance(&inside, &unit(4, 1)).sqrt() <= 1e-3);
        let outside = w.scripted_embed("v", 100.0).unwrap();
        assert!(crate::vector::squared_distance(&outside, &unit(4, 0)).sqrt() <= 1e-3);
        // 425 lies in both events; the later-starting one wins.
        let both = w.scripted_embed("v", 425.0).unwrap();
        assert!(crate::vector::squared_distance(&both, &unit(4, 2)).sqrt() <= 1e-3);
        assert_eq!(w.scripted_embed("v", 410.0).unwrap(), inside);
        assert!(matches!(w.scripted_embed("nope", 1.0), Err(PortError::UnknownVideo(_))));
    }

    #[test]
    fn describe_full_and_glimpse() {
        let w = world();
        assert_eq!(
            w.describe("v", &TemporalInterval::new(300.0, 420.0)).unwrap(),
            "a red kite rises"
        );
        assert_eq!(
            w.describe("v", &TemporalInterval::new(300.0, 405.0)).unwrap(),
            "something red at the edge"
        );
        assert_eq!(w.describe("v", &TemporalInterval::new(0.0, 100.0)).unwrap(), "empty field");
    }

    #[test]
    fn text_embedding_uses_lexicon() {
        let w = world();
        assert_eq!(w.embed_text("Where is the kite?"), unit(4, 1));
        let fallback = w.embed_text("nothing known");
        assert!((norm(&fallback) - 1.0).abs() < 1e-12);
        assert_eq!(fallback, w.embed_text("nothing known"));
    }

    #[test]
    fn place_window_respects_gaps() {
        let reviewed = [TemporalInterval::new(300.0, 480.0)];
        let w = place_window(505.0, &reviewed, 180.0, 600.0).unwrap();
        assert!(w.start_s >= 480.0 && w.end_s <= 600.0 && w.len() <= 180.0);
        let short = place_window(15.0, &[], 180.0, 30.0).unwrap();
        assert!(short.len() < 30.0);
    }
}
