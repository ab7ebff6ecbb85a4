//! The session loop: plan, ground, answer, verify, memorize, repeat until a
//! confident answer or a budget stops it. Every step is appended to a
//! replayable trace.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backends::{LlmPort, Ports, VisionPort};
use crate::error::{Error, Result};
use crate::memory::{render_memory_digest, retrieve_context, EventGraph, Finding, MemoryConfig};
use crate::model::{
    validate_interval, AgentAnswer, BudgetConfig, ConfidenceBand, EpisodeOrigin, Query, ReasoningEpisode,
    TemporalInterval, ValidationVerdict, VideoDescriptor,
};
use crate::perception::{
    assemble_evidence, sample_segment, AggregationMode, FrameCache, GroundingOptions, Projector,
    DEFAULT_BUDGET_K,
};
use crate::planner::{
    apply_refinement, fallback_window, fit_to_unreviewed, propose_next_segment, PlannerError, PlannerState,
};
use crate::tcr::{align_with_cache, bin_width, make_refinement_delta, planned_position, RefinementDelta};

pub mod answer;
pub mod replay;
pub mod trace;

pub use answer::{build_answer_prompt, parse_agent_answer, AnswerParseError};
pub use replay::ReplayError;
pub use trace::{PortCall, RecordKind, SessionTrace, TraceHeader, TraceRecord, ENGINE_TAG};

use replay::{drain, CallLog, RecordingLlm, RecordingVision, ReplayQueue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    NoRtp,
    NoTm,
    NoTcr,
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "no-rtp" => Ok(Ablation::NoRtp),
            "no-tm" => Ok(Ablation::NoTm),
            "no-tcr" => Ok(Ablation::NoTcr),
            other => Err(format!("unknown ablation {other:?} (expected no-rtp, no-tm or no-tcr)")),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::NoRtp => "no-rtp",
            Ablation::NoTm => "no-tm",
            Ablation::NoTcr => "no-tcr",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub budget: BudgetConfig,
    pub ablation: BTreeSet<Ablation>,
    pub seed: u64,
    pub stop_band: ConfidenceBand,
    pub frames_per_segment: usize,
    pub aggregation: AggregationMode,
    pub memory: MemoryConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            budget: BudgetConfig::default(),
            ablation: BTreeSet::new(),
            seed: 0,
            stop_band: ConfidenceBand::High,
            frames_per_segment: DEFAULT_BUDGET_K,
            aggregation: AggregationMode::Mean,
            memory: MemoryConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn with_ablation(mut self, a: Ablation) -> Self {
        self.ablation.insert(a);
        self
    }

    pub fn has(&self, a: Ablation) -> bool {
        self.ablation.contains(&a)
    }

    /// Frames a session may embed on `video`: the configured cap, further
    /// limited to what one exhaustive cap-window scan would cost.
    pub fn frame_budget(&self, video: &VideoDescriptor) -> u64 {
        let windows = (video.duration_s / self.budget.max_segment_s).ceil().max(1.0) as u64;
        self.budget
            .max_total_frames
            .min(windows * self.frames_per_segment as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.budget;
        if b.max_iterations == 0 || b.retry_limit == 0 || b.max_total_frames == 0 {
            return Err(Error::Invalid(
                "max_iterations, retry_limit and max_total_frames must be positive".into(),
            ));
        }
        if !(b.max_segment_s.is_finite() && b.max_segment_s > 0.0) {
            return Err(Error::Invalid("max_segment_s must be positive".into()));
        }
        if self.frames_per_segment < 2 {
            return Err(Error::Invalid("frames_per_segment must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    HighConfidence,
    IterationBudget,
    FrameBudget,
    RetriesExhaustedFallbackExhausted,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::HighConfidence => "high-confidence",
            Termination::IterationBudget => "iteration-budget",
            Termination::FrameBudget => "frame-budget",
            Termination::RetriesExhaustedFallbackExhausted => "retries-exhausted-fallback-exhausted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    #[serde(rename = "final")]
    pub final_answer: AgentAnswer,
    pub iterations_used: u32,
    pub total_frames: u64,
    pub terminated_by: Termination,
    /// Where the engine locates the answer: the best memory node for the
    /// query, or the final answer's segment when memory is disabled.
    pub answer_interval: Option<TemporalInterval>,
    pub episodes: Vec<ReasoningEpisode>,
    pub trace: SessionTrace,
}

/// Answer returned when no reply could be parsed in any iteration.
fn no_answer() -> AgentAnswer {
    AgentAnswer {
        answer: String::new(),
        reason: "no parseable answer was produced".into(),
        summary: String::new(),
        confidence: crate::model::Confidence {
            score: 1,
            band: ConfidenceBand::Low,
        },
    }
}

struct Recorder<'a> {
    trace: SessionTrace,
    clock: &'a mut dyn FnMut(usize) -> u64,
}

impl Recorder<'_> {
    fn push(&mut self, iteration: u32, kind: RecordKind, payload: Value) {
        let wall_ms = (self.clock)(self.trace.records.len());
        self.trace.records.push(TraceRecord {
            iteration,
            kind,
            payload,
            wall_ms,
        });
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("trace payloads serialize")
}

/// Seeded uniform choice among valid cap-length windows at integer starts.
fn random_window(
    rng: &mut ChaCha8Rng,
    video: &VideoDescriptor,
    reviewed: &[TemporalInterval],
    cfg: &BudgetConfig,
) -> Option<TemporalInterval> {
    let len = cfg.max_segment_s.min(video.duration_s - 1.0);
    if len <= 0.0 {
        return None;
    }
    let last = (video.duration_s - len).floor() as u64;
    let starts: Vec<u64> = (0..=last)
        .filter(|&s| {
            let w = TemporalInterval::new(s as f64, s as f64 + len);
            validate_interval(&w, video, reviewed, cfg).is_accepted()
        })
        .collect();
    if starts.is_empty() {
        return None;
    }
    let s = starts[rng.gen_range(0..starts.len())] as f64;
    Some(TemporalInterval::new(s, s + len))
}

fn abort(rec: Recorder<'_>, iteration: u32, reason: impl std::fmt::Display) -> Error {
    Error::SessionAborted {
        iteration,
        reason: reason.to_string(),
        trace: Box::new(rec.trace),
    }
}

/// Runs one question against one video.
pub fn run_session(query: &Query, video: &VideoDescriptor, cfg: &SessionConfig, ports: &Ports) -> Result<SessionResult> {
    let start = Instant::now();
    let mut clock = move |_: usize| start.elapsed().as_millis() as u64;
    run_with(query, video, cfg, ports.llm.clone(), ports.vision.clone(), &mut clock)
}

/// Re-executes a recorded session, serving every port call from the trace.
pub fn replay_session(trace: &SessionTrace) -> Result<SessionResult> {
    if trace.header.engine != ENGINE_TAG {
        return Err(ReplayError::VersionMismatch {
            expected: ENGINE_TAG.to_string(),
            found: trace.header.engine.clone(),
        }
        .into());
    }
    let calls = trace
        .port_calls()
        .map_err(|e| ReplayError::Malformed(e.to_string()))?;
    let queue = ReplayQueue::new(calls);
    let walls: Vec<u64> = trace.records.iter().map(|r| r.wall_ms).collect();
    let mut clock = |i: usize| walls.get(i).copied().unwrap_or(0);
    let h = &trace.header;
    let truncated = |result: &SessionTrace| {
        let record = trace.records.len();
        let (iteration, kind) = result
            .records
            .get(record)
            .map(|r| (r.iteration, r.kind.to_string()))
            .unwrap_or((trace.records.last().map_or(0, |r| r.iteration), "next step".into()));
        ReplayError::Truncated { record, iteration, kind }
    };
    let outcome = run_with(
        &h.query,
        &h.video,
        &h.config,
        Arc::new(queue.clone()),
        Arc::new(queue.clone()),
        &mut clock,
    );
    match outcome {
        Ok(result) => {
            if result.trace.records.len() > trace.records.len() {
                return Err(truncated(&result.trace).into());
            }
            if result.trace != *trace || queue.remaining() != 0 {
                return Err(ReplayError::Divergence("replayed trace differs from the recorded one".into()).into());
            }
            Ok(result)
        }
        Err(Error::SessionAborted { reason, trace: partial, .. })
            if reason.contains("replay has no recorded reply") =>
        {
            let record = trace.records.len();
            let (iteration, kind) = partial
                .records
                .get(record)
                .map(|r| (r.iteration, r.kind.to_string()))
                .unwrap_or((0, "unknown".into()));
            Err(ReplayError::Truncated { record, iteration, kind }.into())
        }
        Err(Error::SessionAborted { reason, .. }) if reason.contains("replay diverged") => {
            Err(ReplayError::Divergence(reason).into())
        }
        Err(e) => Err(e),
    }
}

struct Best {
    answer: AgentAnswer,
    interval: TemporalInterval,
}

fn run_with(
    query: &Query,
    video: &VideoDescriptor,
    cfg: &SessionConfig,
    llm: Arc<dyn LlmPort>,
    vision: Arc<dyn VisionPort>,
    clock: &mut dyn FnMut(usize) -> u64,
) -> Result<SessionResult> {
    cfg.validate()?;
    video.validate().map_err(|e| Error::Invalid(e.to_string()))?;
    query.validate().map_err(|e| Error::Invalid(e.to_string()))?;
    llm.ping()?;
    vision.ping()?;

    let log: CallLog = Arc::new(Mutex::new(Vec::new()));
    let llm = RecordingLlm { inner: llm, log: log.clone() };
    let vision = RecordingVision { inner: vision, log: log.clone() };
    let mut rec = Recorder {
        trace: SessionTrace::new(TraceHeader::new(query, video, cfg)),
        clock,
    };

    let budget = &cfg.budget;
    let k = cfg.frames_per_segment;
    let frame_budget = cfg.frame_budget(video);
    let no_rtp = cfg.has(Ablation::NoRtp);
    let no_tm = cfg.has(Ablation::NoTm);
    let no_tcr = cfg.has(Ablation::NoTcr);

    let mut state = PlannerState::new(query.clone());
    let mut graph = EventGraph::new();
    let mut cache = FrameCache::new();
    let mut projector: Option<Projector> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut total_frames = 0u64;
    let mut episodes = Vec::new();
    let mut best: Option<Best> = None;
    let mut pending: Option<ReasoningEpisode> = None;
    let mut terminated_by = Termination::IterationBudget;
    let mut iteration = 0u32;

    while iteration < budget.max_iterations {
        if frame_budget.saturating_sub(total_frames) < k as u64 {
            terminated_by = Termination::FrameBudget;
            break;
        }
        let t = iteration + 1;
        let reviewed = state.reviewed_intervals();

        // 1. Episode.
        let mut proposal = json!({});
        let episode = if let Some(ep) = pending.take() {
            ReasoningEpisode { iteration: t, ..ep }
        } else if no_rtp {
            let window = random_window(&mut rng, video, &reviewed, budget);
            let (interval, origin) = match window {
                Some(w) => (Some(w), EpisodeOrigin::RandomAblation),
                None => (fallback_window(video, &reviewed, budget), EpisodeOrigin::Fallback),
            };
            let Some(interval) = interval else {
                terminated_by = Termination::RetriesExhaustedFallbackExhausted;
                break;
            };
            ReasoningEpisode {
                iteration: t,
                intent: crate::planner::synthesized_intent(&interval, query),
                interval,
                origin,
            }
        } else {
            match propose_next_segment(&state, video, budget, &llm) {
                Ok(p) => {
                    proposal = json!({
                        "attempts": p.attempts,
                        "rejections": p.rejections,
                        "raw_reply": p.raw_reply,
                    });
                    ReasoningEpisode {
                        iteration: t,
                        intent: p.intent,
                        interval: p.interval,
                        origin: EpisodeOrigin::Planned,
                    }
                }
                Err(PlannerError::RetriesExhausted {
                    attempts, rejections, ..
                }) => {
                    proposal = json!({ "attempts": attempts, "rejections": rejections });
                    match fallback_window(video, &reviewed, budget) {
                        Some(interval) => ReasoningEpisode {
                            iteration: t,
                            intent: crate::planner::synthesized_intent(&interval, query),
                            interval,
                            origin: EpisodeOrigin::Fallback,
                        },
                        None => {
                            proposal["calls"] = to_value(&drain(&log));
                            rec.push(t, RecordKind::Proposal, proposal);
                            terminated_by = Termination::RetriesExhaustedFallbackExhausted;
                            break;
                        }
                    }
                }
                Err(PlannerError::Port(e)) => {
                    proposal["calls"] = to_value(&drain(&log));
                    rec.push(t, RecordKind::Proposal, proposal);
                    return Err(abort(rec, t, e));
                }
            }
        };
        iteration = t;
        proposal["episode"] = to_value(&episode);
        proposal["calls"] = to_value(&drain(&log));
        rec.push(t, RecordKind::Proposal, proposal);
        let verdict = validate_interval(&episode.interval, video, &reviewed, budget);
        rec.push(t, RecordKind::Validation, json!({ "verdict": verdict }));
        if let ValidationVerdict::Rejected(reason) = verdict {
            return Err(abort(rec, t, format!("internal episode rejected: {reason}")));
        }
        episodes.push(episode.clone());

        // 2. Grounding.
        let opts = GroundingOptions {
            budget_k: k,
            mode: cfg.aggregation,
            max_frames: frame_budget - total_frames,
        };
        let sampled = match sample_segment(&episode, video, &vision, &mut cache, &opts) {
            Ok(s) => s,
            Err(e) => {
                rec.push(t, RecordKind::Evidence, json!({ "calls": drain(&log) }));
                return Err(abort(rec, t, e));
            }
        };
        let proj = projector.get_or_insert_with(|| {
            let d = sampled.samples.first().map_or(1, |s| s.embedding.len());
            Projector::seeded(d, 2 * d, d, cfg.seed)
        });
        let mut evidence = match assemble_evidence(&episode, sampled, proj, cfg.aggregation) {
            Ok(e) => e,
            Err(e) => {
                rec.push(t, RecordKind::Evidence, json!({ "calls": drain(&log) }));
                return Err(abort(rec, t, e));
            }
        };
        match vision.describe(&video.id, &episode.interval) {
            Ok(d) => evidence.description = d,
            Err(e) => {
                rec.push(t, RecordKind::Evidence, json!({ "evidence": evidence, "calls": drain(&log) }));
                return Err(abort(rec, t, e));
            }
        }
        total_frames += evidence.frame_cost;
        rec.push(
            t,
            RecordKind::Evidence,
            json!({ "evidence": evidence, "total_frames": total_frames, "calls": drain(&log) }),
        );

        // 3. Answer.
        let prompt = build_answer_prompt(query, &state.memory_digest, &evidence);
        let mut errors: Vec<String> = Vec::new();
        let mut answer = None;
        for _ in 0..budget.retry_limit {
            let user = match errors.last() {
                None => prompt.user.clone(),
                Some(err) => format!(
                    "{}\n\nYour previous reply could not be parsed ({err}). Follow the Output Format exactly.",
                    prompt.user
                ),
            };
            let raw = match llm.complete(&prompt.system, &user) {
                Ok(r) => r,
                Err(e) => {
                    rec.push(t, RecordKind::Answer, json!({ "errors": errors, "calls": drain(&log) }));
                    return Err(abort(rec, t, e));
                }
            };
            match parse_agent_answer(&raw) {
                Ok(a) => {
                    answer = Some(a);
                    break;
                }
                Err(e) => errors.push(e.to_string()),
            }
        }
        rec.push(
            t,
            RecordKind::Answer,
            json!({ "answer": answer, "errors": errors, "calls": drain(&log) }),
        );

        // 4. Consistency check.
        let mut delta: Option<RefinementDelta> = None;
        if !no_tcr {
            let emb = match llm.embed_text(&episode.intent) {
                Ok(v) => v,
                Err(e) => {
                    rec.push(t, RecordKind::Alignment, json!({ "calls": drain(&log) }));
                    return Err(abort(rec, t, e));
                }
            };
            match align_with_cache(&emb, &cache, video, bin_width(budget)) {
                Ok(alignment) => {
                    let d = make_refinement_delta(&alignment, &episode.interval, video);
                    let planned = planned_position(&alignment, &episode.interval, video);
                    rec.push(
                        t,
                        RecordKind::Alignment,
                        json!({ "alignment": alignment, "planned_position": planned, "delta": d, "calls": drain(&log) }),
                    );
                    delta = Some(d);
                    state.last_feedback = Some(d);
                }
                Err(e) => {
                    rec.push(
                        t,
                        RecordKind::Alignment,
                        json!({ "error": e.to_string(), "calls": drain(&log) }),
                    );
                }
            }
        }

        // 5. Memory.
        if let (false, Some(a)) = (no_tm, &answer) {
            let finding = Finding {
                iteration: t,
                interval: episode.interval,
                summary: a.summary.clone(),
                reason: a.reason.clone(),
                embedding: evidence.pooled.clone(),
            };
            let touched = graph.update(&finding, delta.as_ref(), &cfg.memory);
            state.memory_digest = render_memory_digest(&graph, cfg.memory.digest_max_chars);
            rec.push(
                t,
                RecordKind::MemoryUpdate,
                json!({ "touched": touched, "digest": state.memory_digest, "graph": graph }),
            );
        }

        state.mark_reviewed(episode.interval);
        let band = answer.as_ref().map(|a| a.confidence.band);
        if band == Some(ConfidenceBand::Low) {
            state.mark_last_irrelevant();
        }
        if let Some(a) = answer {
            let better = best
                .as_ref()
                .is_none_or(|b| a.confidence.score >= b.answer.confidence.score);
            if better {
                best = Some(Best {
                    answer: a,
                    interval: episode.interval,
                });
            }
        }

        // 6. Stop or continue.
        if band.is_some_and(|b| b >= cfg.stop_band) {
            terminated_by = Termination::HighConfidence;
            break;
        }
        if let Some(d) = delta {
            let low = band.is_none_or(|b| b == ConfidenceBand::Low);
            if d.redirect && low && episode.origin != EpisodeOrigin::Refined {
                let moved = apply_refinement(&episode.interval, &d, video, budget);
                let reviewed = state.reviewed_intervals();
                if let Some(interval) = fit_to_unreviewed(&moved, video, &reviewed, budget) {
                    pending = Some(ReasoningEpisode {
                        iteration: t + 1,
                        intent: episode.intent.clone(),
                        interval,
                        origin: EpisodeOrigin::Refined,
                    });
                }
            }
        }
    }

    // Locate the answer.
    let answer_interval = if !no_tm && !graph.is_empty() {
        match llm.embed_text(&query.text) {
            Ok(q) => retrieve_context(&graph, &q, 1, cfg.memory.lambda)
                .first()
                .map(|n| n.anchor),
            Err(e) => {
                rec.push(iteration, RecordKind::Termination, json!({ "calls": drain(&log) }));
                return Err(abort(rec, iteration, e));
            }
        }
    } else {
        best.as_ref().map(|b| b.interval)
    };
    let final_answer = best.map_or_else(no_answer, |b| b.answer);
    rec.push(
        iteration,
        RecordKind::Termination,
        json!({
            "terminated_by": terminated_by,
            "final": final_answer,
            "answer_interval": answer_interval,
            "iterations_used": iteration,
            "total_frames": total_frames,
            "calls": drain(&log),
        }),
    );
    Ok(SessionResult {
        final_answer,
        iterations_used: iteration,
        total_frames,
        terminated_by,
        answer_interval,
        episodes,
        trace: rec.trace,
    })
}
