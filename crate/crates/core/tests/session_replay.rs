use std::sync::Arc;

use qtr_core::backends::scripted::{ScriptedLlm, ScriptedVision};
use qtr_core::backends::{LlmPort, PortError, Ports, VisionPort};
use qtr_core::controller::{
    replay_session, run_session, Ablation, PortCall, ReplayError, SessionConfig, SessionResult, SessionTrace,
    Termination,
};
use qtr_core::error::Error;
use qtr_core::harness::default_suite;
use qtr_core::model::TemporalInterval;

fn run(qid: &str, cfg: &SessionConfig) -> SessionResult {
    let suite = default_suite();
    let (world, q) = suite
        .iter()
        .find_map(|w| w.question(qid).map(|q| (w, q)))
        .expect("question exists");
    let shared = Arc::new(world.world.clone());
    let video = shared.video(&q.query.video).unwrap().descriptor.clone();
    let ports = Ports::new(
        Arc::new(ScriptedLlm::new(Arc::clone(&shared), &video.id)),
        Arc::new(ScriptedVision::new(shared)),
    );
    run_session(&q.query, &video, cfg, &ports).unwrap()
}

fn replay_error(trace: &SessionTrace) -> ReplayError {
    match replay_session(trace) {
        Err(Error::Replay(e)) => e,
        other => panic!("expected a replay error, got {:?}", other.map(|r| r.trace.hash())),
    }
}

#[test]
fn replay_is_bit_exact_across_configs() {
    for ab in [None, Some(Ablation::NoTm), Some(Ablation::NoTcr), Some(Ablation::NoRtp)] {
        let mut cfg = SessionConfig { seed: 5, ..SessionConfig::default() };
        if let Some(a) = ab {
            cfg = cfg.with_ablation(a);
        }
        let r = run("harbor-15", &cfg);
        let again = run("harbor-15", &cfg);
        assert_eq!(r.trace.hash(), again.trace.hash());
        let replayed = replay_session(&r.trace).unwrap();
        assert_eq!(replayed, r);
        let text = serde_json::to_string(&replayed).unwrap();
        assert_eq!(text, serde_json::to_string(&r).unwrap());
    }
}

#[test]
fn ndjson_round_trip_keeps_hash() {
    let r = run("park-2", &SessionConfig::default());
    let back = SessionTrace::from_ndjson(&r.trace.to_ndjson()).unwrap();
    assert_eq!(back, r.trace);
    assert_eq!(back.hash(), r.trace.hash());
    let mut timed = back.clone();
    for rec in &mut timed.records {
        rec.wall_ms += 1000;
    }
    assert_eq!(timed.hash(), r.trace.hash(), "wall time is not hashed");
    assert_eq!(replay_session(&timed).unwrap().trace, timed);
}

#[test]
fn engine_tag_mismatch() {
    let mut t = run("park-2", &SessionConfig::default()).trace;
    t.header.engine = "qtr-core/0.0.0-other".into();
    assert!(matches!(replay_error(&t), ReplayError::VersionMismatch { found, .. } if found == "qtr-core/0.0.0-other"));
}

#[test]
fn truncated_trace() {
    let full = run("festival-17", &SessionConfig::default()).trace;
    assert!(full.records.len() > 3);
    for keep in [1, full.records.len() / 2, full.records.len() - 1] {
        let mut t = full.clone();
        t.records.truncate(keep);
        match replay_error(&t) {
            ReplayError::Truncated { record, .. } => assert_eq!(record, keep),
            e => panic!("keep {keep}: {e}"),
        }
    }
}

#[test]
fn edited_reply_diverges() {
    let full = run("park-2", &SessionConfig::default()).trace;
    let mut t = full.clone();
    // Flip the recorded model reply inside the last answer record.
    let rec = t
        .records
        .iter_mut()
        .rev()
        .find(|r| r.payload.get("calls").is_some_and(|c| c.to_string().contains("\"complete\"")))
        .unwrap();
    let calls = rec.payload["calls"].as_array_mut().unwrap();
    for c in calls {
        if c["port"] == "complete" {
            c["reply"] = serde_json::Value::String("Answer: nothing\nReason: edited\nSummary: edited\nConfidence: 95".into());
        }
    }
    assert!(matches!(replay_error(&t), ReplayError::Divergence(_)));

    // A recorded call the session never makes is left over at the end.
    let mut extra = full;
    let spare = serde_json::to_value(PortCall::EmbedText { text: "spare".into(), vector: vec![0.0] }).unwrap();
    let last = extra.records.last_mut().unwrap();
    match last.payload.get_mut("calls").and_then(|c| c.as_array_mut()) {
        Some(list) => list.push(spare),
        None => last.payload["calls"] = serde_json::Value::Array(vec![spare]),
    }
    assert!(matches!(replay_error(&extra), ReplayError::Divergence(_)));
}

#[test]
fn garbage_calls_are_malformed() {
    let mut t = run("park-2", &SessionConfig::default()).trace;
    t.records[0].payload["calls"] = serde_json::json!([{"port": "teleport"}]);
    assert!(matches!(replay_error(&t), ReplayError::Malformed(_)));
}

/// A vision port that fails after a fixed number of frames.
struct Flaky {
    inner: ScriptedVision,
    left: std::sync::atomic::AtomicI64,
}

impl VisionPort for Flaky {
    fn embed(&self, video_id: &str, time_s: f64) -> Result<Vec<f64>, PortError> {
        if self.left.fetch_sub(1, std::sync::atomic::Ordering::SeqCst) <= 0 {
            return Err(PortError::Other("encoder offline".into()));
        }
        self.inner.embed(video_id, time_s)
    }
    fn describe(&self, video_id: &str, interval: &TemporalInterval) -> Result<String, PortError> {
        self.inner.describe(video_id, interval)
    }
}

#[test]
fn port_failure_aborts_with_partial_trace() {
    let suite = default_suite();
    let world = &suite[0];
    let q = &world.questions[0];
    let shared = Arc::new(world.world.clone());
    let video = shared.video(&q.query.video).unwrap().descriptor.clone();
    let llm: Arc<dyn LlmPort> = Arc::new(ScriptedLlm::new(Arc::clone(&shared), &video.id));
    let vision = Flaky {
        inner: ScriptedVision::new(shared),
        left: 3.into(),
    };
    let ports = Ports::new(llm, Arc::new(vision));
    match run_session(&q.query, &video, &SessionConfig::default(), &ports) {
        Err(Error::SessionAborted { reason, trace, .. }) => {
            assert!(reason.contains("encoder offline"), "{reason}");
            assert!(!trace.records.is_empty());
        }
        other => panic!("expected abort, got {:?}", other.map(|r| r.terminated_by)),
    }
}

#[test]
fn budgets_bound_the_session() {
    let mut cfg = SessionConfig::default();
    cfg.budget.max_iterations = 1;
    let r = run("festival-3", &cfg);
    assert_eq!(r.iterations_used, 1);
    assert!(matches!(r.terminated_by, Termination::IterationBudget | Termination::HighConfidence));

    let mut cfg = SessionConfig::default();
    cfg.budget.max_total_frames = 20;
    let r = run("festival-3", &cfg);
    assert!(r.total_frames <= 20, "{}", r.total_frames);
}
