//! Segment planning: builds the segment-proposal prompt, asks the language
//! model for the next window to inspect, validates the reply and applies
//! consistency-driven refinements.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{LlmPort, PortError};
use crate::model::{
    fmt_seconds, unreviewed_gaps, validate_interval, BudgetConfig, Query, TemporalInterval, ValidationVerdict,
    VideoDescriptor,
};
use crate::tcr::RefinementDelta;

pub const RTP_SYSTEM_TEMPLATE: &str = include_str!("../assets/prompts/rtp_system.txt");
pub const RTP_USER_TEMPLATE: &str = include_str!("../assets/prompts/rtp_user.txt");

/// Shortest window the planner will fall back to.
pub const MIN_SEGMENT_S: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReviewedSegment {
    pub interval: TemporalInterval,
    /// Set when the answer for this segment came back in the low band.
    #[serde(default)]
    pub irrelevant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerState {
    pub query: Query,
    pub reviewed: Vec<ReviewedSegment>,
    pub memory_digest: String,
    pub last_feedback: Option<RefinementDelta>,
}

impl PlannerState {
    pub fn new(query: Query) -> Self {
        PlannerState {
            query,
            reviewed: Vec::new(),
            memory_digest: String::new(),
            last_feedback: None,
        }
    }

    pub fn reviewed_intervals(&self) -> Vec<TemporalInterval> {
        self.reviewed.iter().map(|r| r.interval).collect()
    }

    pub fn mark_reviewed(&mut self, interval: TemporalInterval) {
        self.reviewed.push(ReviewedSegment {
            interval,
            irrelevant: false,
        });
    }

    /// Flags the most recent reviewed segment as irrelevant.
    pub fn mark_last_irrelevant(&mut self) {
        if let Some(last) = self.reviewed.last_mut() {
            last.irrelevant = true;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentProposal {
    pub interval: TemporalInterval,
    pub raw_reply: String,
    pub attempts: u32,
    pub intent: String,
    /// Failure reason for each rejected attempt, in order.
    pub rejections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplyParseError {
    #[error("no [start_time, end_time] array found in the reply")]
    NoArrayFound,
    #[error("array element {0:?} is not a number")]
    NonNumeric(String),
    #[error("array has {0} elements, expected 2")]
    WrongArity(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("no valid segment after {attempts} attempts (last failure: {last_failure})")]
    RetriesExhausted {
        attempts: u32,
        last_failure: String,
        rejections: Vec<String>,
    },
    #[error(transparent)]
    Port(#[from] PortError),
}

fn render_reviewed_list(state: &PlannerState) -> String {
    let mut list = if state.reviewed.is_empty() {
        "none".to_string()
    } else {
        state
            .reviewed
            .iter()
            .map(|r| {
                let base = format!("[{}, {}]", r.interval.start_s.round(), r.interval.end_s.round());
                if r.irrelevant {
                    format!("{base} (irrelevant)")
                } else {
                    base
                }
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    if !state.memory_digest.is_empty() {
        list.push_str("\nHistory record:\n");
        list.push_str(&state.memory_digest);
    }
    list
}

/// Renders the segment-proposal prompt for the current planner state.
pub fn build_rtp_prompt(state: &PlannerState, video: &VideoDescriptor, cfg: &BudgetConfig) -> PromptPair {
    let duration = fmt_seconds(video.duration_s);
    PromptPair {
        system: RTP_SYSTEM_TEMPLATE.replace("{reviewed_list}", &render_reviewed_list(state)),
        user: RTP_USER_TEMPLATE
            .replace("{question}", &state.query.formatted())
            .replace("{duration}", &duration)
            .replace("{max_segment}", &fmt_seconds(cfg.max_segment_s)),
    }
}

/// Extracts the first two-element numeric array from a free-form reply.
/// Surrounding prose, code fences and nested brackets are tolerated.
pub fn parse_segment_reply(raw: &str) -> Result<TemporalInterval, ReplyParseError> {
    let mut first_error = None;
    let mut rest = raw;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let Some(close) = after.find(']') else { break };
        let body = &after[..close];
        if body.contains('[') {
            // Not innermost; resume from the nested bracket.
            rest = after;
            continue;
        }
        match parse_pair(body) {
            Ok(interval) => return Ok(interval),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
        rest = &after[close + 1..];
    }
    Err(first_error.unwrap_or(ReplyParseError::NoArrayFound))
}

fn parse_pair(body: &str) -> Result<TemporalInterval, ReplyParseError> {
    let parts: Vec<&str> = body.split(',').map(str::trim).collect();
    if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(ReplyParseError::WrongArity(
            parts.iter().filter(|p| !p.is_empty()).count(),
        ));
    }
    let num = |p: &str| -> Result<f64, ReplyParseError> {
        p.trim_matches('"')
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| ReplyParseError::NonNumeric(p.to_string()))
    };
    Ok(TemporalInterval::new(num(parts[0])?, num(parts[1])?))
}

/// Optional `Purpose:` line of a planning reply.
fn purpose_line(raw: &str) -> Option<String> {
    raw.lines().find_map(|l| {
        let t = l.trim();
        let lower = t.to_ascii_lowercase();
        lower
            .starts_with("purpose:")
            .then(|| t["purpose:".len()..].trim().to_string())
            .filter(|s| !s.is_empty())
    })
}

pub fn synthesized_intent(interval: &TemporalInterval, query: &Query) -> String {
    format!(
        "inspect [{},{}] for: {}",
        fmt_seconds(interval.start_s),
        fmt_seconds(interval.end_s),
        query.text
    )
}

/// Asks the model for the next segment, re-prompting with the failure reason
/// until a reply validates or `cfg.retry_limit` attempts are spent.
pub fn propose_next_segment(
    state: &PlannerState,
    video: &VideoDescriptor,
    cfg: &BudgetConfig,
    llm: &dyn LlmPort,
) -> Result<SegmentProposal, PlannerError> {
    let prompt = build_rtp_prompt(state, video, cfg);
    let reviewed = state.reviewed_intervals();
    let limit = cfg.retry_limit.max(1);
    let mut rejections = Vec::new();
    for attempt in 1..=limit {
        let user = match rejections.last() {
            None => prompt.user.clone(),
            Some(reason) => format!(
                "{}\n\nYour previous reply was rejected: {reason}. Return ONLY the JSON array and nothing else.",
                prompt.user
            ),
        };
        let reply = llm.complete(&prompt.system, &user)?;
        let failure = match parse_segment_reply(&reply) {
            Err(e) => e.to_string(),
            Ok(interval) => match validate_interval(&interval, video, &reviewed, cfg) {
                ValidationVerdict::Accepted => {
                    let intent =
                        purpose_line(&reply).unwrap_or_else(|| synthesized_intent(&interval, &state.query));
                    return Ok(SegmentProposal {
                        interval,
                        raw_reply: reply,
                        attempts: attempt,
                        intent,
                        rejections,
                    });
                }
                ValidationVerdict::Rejected(reason) => reason.to_string(),
            },
        };
        rejections.push(failure);
    }
    Err(PlannerError::RetriesExhausted {
        attempts: limit,
        last_failure: rejections.last().cloned().unwrap_or_default(),
        rejections,
    })
}

/// Re-centres `interval` on the delta's suggested centre and scales its
/// length, clamped to the video and the segment cap.
pub fn apply_refinement(
    interval: &TemporalInterval,
    delta: &RefinementDelta,
    video: &VideoDescriptor,
    cfg: &BudgetConfig,
) -> TemporalInterval {
    let duration = video.duration_s;
    let scale = delta.scale.clamp(0.25, 1.0);
    let mut len = (interval.len() * scale).min(cfg.max_segment_s);
    if len >= duration {
        len = (duration - 1.0).max(duration * 0.5);
    }
    let half = len / 2.0;
    let center = delta.suggested_center_s.clamp(half, duration - half);
    TemporalInterval::new(center - half, center + half)
}

/// Leading cap-length window of the longest unreviewed gap.
pub fn fallback_window(
    video: &VideoDescriptor,
    reviewed: &[TemporalInterval],
    cfg: &BudgetConfig,
) -> Option<TemporalInterval> {
    let gaps = unreviewed_gaps(video.duration_s, reviewed, MIN_SEGMENT_S);
    let gap = gaps.iter().max_by(|a, b| a.len().total_cmp(&b.len()).then(b.start_s.total_cmp(&a.start_s)))?;
    let mut len = cfg.max_segment_s.min(gap.len());
    if gap.start_s <= 0.0 && gap.start_s + len >= video.duration_s {
        len -= 1.0;
    }
    (len >= MIN_SEGMENT_S).then(|| TemporalInterval::new(gap.start_s, gap.start_s + len))
}

/// Moves `window` into the nearest unreviewed gap, shrinking it to fit, and
/// returns it if it then validates.
pub fn fit_to_unreviewed(
    window: &TemporalInterval,
    video: &VideoDescriptor,
    reviewed: &[TemporalInterval],
    cfg: &BudgetConfig,
) -> Option<TemporalInterval> {
    let gaps = unreviewed_gaps(video.duration_s, reviewed, MIN_SEGMENT_S);
    let c = window.center();
    let distance = |g: &TemporalInterval| {
        if g.contains_time(c) {
            0.0
        } else {
            (g.start_s - c).abs().min((g.end_s - c).abs())
        }
    };
    let gap = gaps.iter().min_by(|a, b| distance(a).total_cmp(&distance(b)))?;
    let len = window.len().min(gap.len());
    let start = window.start_s.clamp(gap.start_s, gap.end_s - len);
    let fitted = TemporalInterval::new(start, start + len);
    validate_interval(&fitted, video, reviewed, cfg)
        .is_accepted()
        .then_some(fitted)
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::backends::PortError;

    struct Script(Mutex<Vec<String>>);

    impl Script {
        fn new(replies: &[&str]) -> Self {
            Script(Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()))
        }
    }

    impl LlmPort for Script {
        fn complete(&self, _: &str, _: &str) -> Result<String, PortError> {
            Ok(self.0.lock().unwrap().pop().unwrap_or_else(|| "garbage".into()))
        }
        fn embed_text(&self, _: &str) -> Result<Vec<f64>, PortError> {
            Ok(vec![1.0])
        }
    }

    fn video() -> VideoDescriptor {
        VideoDescriptor::new("v", 600.0, 1.0).unwrap()
    }

    fn state() -> PlannerState {
        PlannerState::new(Query::new("What does the dog fetch?", "v"))
    }

    #[test]
    fn prompt_contents() {
        let cfg = BudgetConfig::default();
        let mut st = state();
        let p = build_rtp_prompt(&st, &video(), &cfg);
        assert!(p.user.contains("Total Video Duration: 600 seconds"));
        assert!(p.user.contains("must NOT exceed 180 seconds (i.e., end_time - start_time <= 180)"));
        assert!(p.user.ends_with("Return ONLY the JSON array and nothing else."));
        assert!(p.user.contains("e.g., [0, 600]"));
        st.mark_reviewed(TemporalInterval::new(0.0, 120.0));
        let p = build_rtp_prompt(&st, &video(), &cfg);
        assert!(p.system.contains("[0, 120]"));
        assert_eq!(p, build_rtp_prompt(&st.clone(), &video(), &cfg));
    }

    #[test]
    fn reviewed_list_rounds_and_annotates() {
        let mut st = state();
        st.mark_reviewed(TemporalInterval::new(10.4, 99.6));
        st.mark_last_irrelevant();
        let p = build_rtp_prompt(&st, &video(), &BudgetConfig::default());
        assert!(p.system.ends_with("[10, 100] (irrelevant)"));
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_segment_reply("[30, 180]"), Ok(TemporalInterval::new(30.0, 180.0)));
        assert_eq!(
            parse_segment_reply("Sure! Here it is: ```[30, 180]```"),
            Ok(TemporalInterval::new(30.0, 180.0))
        );
        assert_eq!(parse_segment_reply("watch minute 3"), Err(ReplyParseError::NoArrayFound));
        assert_eq!(parse_segment_reply("[1, 2, 3]"), Err(ReplyParseError::WrongArity(3)));
        assert!(matches!(parse_segment_reply("[1, \"x\"]"), Err(ReplyParseError::NonNumeric(_))));
        assert_eq!(parse_segment_reply("[[12.5, 40]]"), Ok(TemporalInterval::new(12.5, 40.0)));
        assert_eq!(parse_segment_reply("[a] then [5, 9]"), Ok(TemporalInterval::new(5.0, 9.0)));
    }

    #[test]
    fn propose_first_try() {
        let llm = Script::new(&["[10,150]"]);
        let p = propose_next_segment(&state(), &video(), &BudgetConfig::default(), &llm).unwrap();
        assert_eq!(p.interval, TemporalInterval::new(10.0, 150.0));
        assert_eq!(p.attempts, 1);
        assert_eq!(p.intent, "inspect [10,150] for: What does the dog fetch?");
    }

    #[test]
    fn propose_retries_whole_video() {
        let llm = Script::new(&["[0,600]", "[10,150]"]);
        let p = propose_next_segment(&state(), &video(), &BudgetConfig::default(), &llm).unwrap();
        assert_eq!(p.interval, TemporalInterval::new(10.0, 150.0));
        assert_eq!(p.attempts, 2);
        assert_eq!(p.rejections, vec!["the segment selects the entire video".to_string()]);
    }

    #[test]
    fn propose_exhausts_retries() {
        let llm = Script::new(&["nope", "still nope", "no"]);
        let err = propose_next_segment(&state(), &video(), &BudgetConfig::default(), &llm).unwrap_err();
        assert!(matches!(err, PlannerError::RetriesExhausted { attempts: 3, .. }));
    }

    #[test]
    fn purpose_line_becomes_intent() {
        let llm = Script::new(&["[10, 40]\nPurpose: find the dog's toy"]);
        let p = propose_next_segment(&state(), &video(), &BudgetConfig::default(), &llm).unwrap();
        assert_eq!(p.intent, "find the dog's toy");
    }

    fn delta(center: f64, scale: f64) -> RefinementDelta {
        RefinementDelta {
            suggested_center_s: center,
            scale,
            loss_contribution: 0.0,
            redirect: true,
        }
    }

    #[test]
    fn refinement_examples() {
        let v = video();
        let cfg = BudgetConfig::default();
        let i = TemporalInterval::new(100.0, 200.0);
        assert_eq!(apply_refinement(&i, &delta(300.0, 1.0), &v, &cfg), TemporalInterval::new(250.0, 350.0));
        assert_eq!(apply_refinement(&i, &delta(150.0, 1.0), &v, &cfg), i);
        let j = TemporalInterval::new(0.0, 100.0);
        assert_eq!(apply_refinement(&j, &delta(-50.0, 1.0), &v, &cfg), j);
        let k = apply_refinement(&i, &delta(590.0, 0.5), &v, &cfg);
        assert_eq!(k, TemporalInterval::new(550.0, 600.0));
    }

    #[test]
    fn fallback_uses_longest_gap() {
        let v = video();
        let cfg = BudgetConfig::default();
        let reviewed = [TemporalInterval::new(0.0, 100.0), TemporalInterval::new(150.0, 200.0)];
        assert_eq!(fallback_window(&v, &reviewed, &cfg), Some(TemporalInterval::new(200.0, 380.0)));
        let short = VideoDescriptor::new("s", 30.0, 1.0).unwrap();
        assert_eq!(fallback_window(&short, &[], &cfg), Some(TemporalInterval::new(0.0, 29.0)));
        let full = [TemporalInterval::new(0.0, 600.0)];
        assert_eq!(fallback_window(&v, &full, &cfg), None);
    }

    #[test]
    fn fit_slides_past_reviewed() {
        let v = video();
        let cfg = BudgetConfig::default();
        let reviewed = [TemporalInterval::new(200.0, 380.0)];
        let w = fit_to_unreviewed(&TemporalInterval::new(350.0, 395.0), &v, &reviewed, &cfg).unwrap();
        assert_eq!(w, TemporalInterval::new(380.0, 425.0));
        let inside = fit_to_unreviewed(&TemporalInterval::new(220.0, 240.0), &v, &reviewed, &cfg).unwrap();
        assert_eq!(inside, TemporalInterval::new(180.0, 200.0));
    }
}
