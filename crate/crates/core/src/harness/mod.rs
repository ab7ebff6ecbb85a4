//! Evaluation harness: scripted suites, the brute-force oracle, grading,
//! batch runs, ablations and duration sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::scripted::{ScriptedLlm, ScriptedVision, ScriptedWorld};
use crate::backends::instrument::CountingVision;
use crate::backends::Ports;
use crate::controller::{run_session, Ablation, SessionConfig};
use crate::error::{Error, Result};
use crate::model::{Query, TemporalInterval};

pub mod builtin;
pub mod grading;
pub mod oracle;
pub mod report;

pub use grading::grade;
pub use oracle::{brute_force_oracle, OracleResult};
pub use report::OutputFormat;

const SHIPPED: [&str; 3] = [
    include_str!("../../assets/suite/park.json"),
    include_str!("../../assets/suite/harbor.json"),
    include_str!("../../assets/suite/festival.json"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuestionKind {
    #[default]
    Direct,
    Mislocalized,
    MultiHop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteQuestion {
    pub id: String,
    pub query: Query,
    pub gold_answer: String,
    pub gold_interval: TemporalInterval,
    #[serde(default)]
    pub kind: QuestionKind,
    /// Free-form evaluation split tag (for example "breakpoint" or "global").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

/// One world document: the scripted world plus its questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteWorld {
    #[serde(flatten)]
    pub world: ScriptedWorld,
    pub questions: Vec<SuiteQuestion>,
}

impl SuiteWorld {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        for q in &self.questions {
            q.query.validate()?;
            let video = self
                .world
                .video(&q.query.video)
                .map_err(|_| Error::Invalid(format!("question {} names unknown video {}", q.id, q.query.video)))?;
            let g = q.gold_interval;
            if !(g.is_finite() && g.start_s >= 0.0 && g.end_s <= video.descriptor.duration_s && g.end_s > g.start_s) {
                return Err(Error::Invalid(format!("question {} has a gold interval outside the video", q.id)));
            }
        }
        Ok(())
    }

    pub fn question(&self, id: &str) -> Option<&SuiteQuestion> {
        self.questions.iter().find(|q| q.id == id)
    }
}

/// The built-in three-world suite as shipped in `assets/suite/`.
pub fn default_suite() -> Vec<SuiteWorld> {
    SHIPPED
        .iter()
        .map(|s| serde_json::from_str(s).expect("shipped suite parses"))
        .collect()
}

/// Loads a world document, an array of them, or every `*.json` in a directory.
pub fn load_suite(path: impl AsRef<Path>) -> Result<Vec<SuiteWorld>> {
    let path = path.as_ref();
    let mut worlds = Vec::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            worlds.extend(load_suite(&f)?);
        }
    } else {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        if value.is_array() {
            worlds = serde_json::from_value(value).map_err(|e| Error::format(path, e))?;
        } else {
            worlds.push(serde_json::from_value(value).map_err(|e| Error::format(path, e))?);
        }
    }
    let mut ids = BTreeSet::new();
    for w in &worlds {
        w.validate()?;
        for q in &w.questions {
            if !ids.insert(q.id.clone()) {
                return Err(Error::Invalid(format!("duplicate question id {}", q.id)));
            }
        }
    }
    Ok(worlds)
}

/// Copy of a single-video world stretched to `duration_s`: event centres keep
/// their relative position, event lengths keep their length where it fits.
pub fn stretch_world(base: &SuiteWorld, duration_s: f64) -> Result<SuiteWorld> {
    let mut out = base.clone();
    let [video] = out.world.videos.as_mut_slice() else {
        return Err(Error::Invalid("only single-video worlds can be stretched".into()));
    };
    let old = video.descriptor.duration_s;
    let ratio = duration_s / old;
    let new_id = format!("{}-{}", out.world.name, duration_s.round() as u64);
    let old_id = std::mem::replace(&mut video.descriptor.id, new_id.clone());
    video.descriptor = crate::model::VideoDescriptor::new(&new_id, duration_s, video.descriptor.fps)?;
    let mut mapping = BTreeMap::new();
    for ev in &mut video.events {
        let len = ev.interval.len().min((ev.interval.len() * ratio).max(4.0)).min(duration_s);
        let center = (ev.interval.center() * ratio).clamp(len / 2.0, duration_s - len / 2.0);
        let new = TemporalInterval::new(center - len / 2.0, center + len / 2.0);
        mapping.insert((ev.interval.start_s.to_bits(), ev.interval.end_s.to_bits()), new);
        ev.interval = new;
    }
    for off in out.world.llm_policy.planner_offsets.values_mut() {
        *off *= ratio;
    }
    for q in &mut out.questions {
        if q.query.video == old_id {
            q.query.video = new_id.clone();
        }
        q.id = format!("{}@{}", q.id, duration_s.round() as u64);
        if let Some(new) = mapping.get(&(q.gold_interval.start_s.to_bits(), q.gold_interval.end_s.to_bits())) {
            q.gold_interval = *new;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
    /// Directory receiving `<question id>/trace.ndjson` per session.
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub id: String,
    pub world: String,
    pub video_id: String,
    pub duration_s: f64,
    pub frame_count: u64,
    pub kind: QuestionKind,
    pub gold_answer: String,
    pub answer: String,
    pub correct: bool,
    pub score: u8,
    pub frames: u64,
    /// Embed calls observed on the vision port, counted outside the engine.
    pub embed_calls: u64,
    pub iterations: u32,
    pub terminated_by: Option<String>,
    pub answer_interval: Option<TemporalInterval>,
    pub gold_interval: TemporalInterval,
    pub trace_hash: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub ablation: Vec<Ablation>,
    pub outcomes: Vec<QuestionOutcome>,
    pub accuracy: f64,
    pub mean_frames: f64,
    /// Sessions that ended in an error rather than an answer.
    pub failures: usize,
    /// Mean frames embedded divided by the video's frame count, per duration.
    pub frame_fraction_by_duration: BTreeMap<u64, f64>,
}

impl RunReport {
    fn from_outcomes(cfg: &SessionConfig, outcomes: Vec<QuestionOutcome>) -> Self {
        let n = outcomes.len().max(1) as f64;
        let accuracy = outcomes.iter().filter(|o| o.correct).count() as f64 / n;
        let mean_frames = outcomes.iter().map(|o| o.frames as f64).sum::<f64>() / n;
        let failures = outcomes.iter().filter(|o| o.error.is_some()).count();
        let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for o in &outcomes {
            groups
                .entry(o.duration_s.round() as u64)
                .or_default()
                .push(o.frames as f64 / o.frame_count as f64);
        }
        let frame_fraction_by_duration = groups
            .into_iter()
            .map(|(d, v)| (d, v.iter().sum::<f64>() / v.len() as f64))
            .collect();
        RunReport {
            seed: cfg.seed,
            ablation: cfg.ablation.iter().copied().collect(),
            outcomes,
            accuracy,
            mean_frames,
            failures,
            frame_fraction_by_duration,
        }
    }
}

fn run_question(world: &Arc<ScriptedWorld>, q: &SuiteQuestion, cfg: &SessionConfig, opts: &RunOptions) -> QuestionOutcome {
    let video = world.video(&q.query.video).expect("suite validated").descriptor.clone();
    let vision = CountingVision::new(ScriptedVision::new(Arc::clone(world)));
    let counter = vision.embed_counter();
    let ports = Ports::new(
        Arc::new(ScriptedLlm::new(Arc::clone(world), &video.id)),
        Arc::new(vision),
    );
    let mut outcome = QuestionOutcome {
        id: q.id.clone(),
        world: world.name.clone(),
        video_id: video.id.clone(),
        duration_s: video.duration_s,
        frame_count: video.frame_count,
        kind: q.kind,
        gold_answer: q.gold_answer.clone(),
        answer: String::new(),
        correct: false,
        score: 0,
        frames: 0,
        embed_calls: 0,
        iterations: 0,
        terminated_by: None,
        answer_interval: None,
        gold_interval: q.gold_interval,
        trace_hash: None,
        error: None,
    };
    let result = run_session(&q.query, &video, cfg, &ports);
    outcome.embed_calls = counter.load(Ordering::SeqCst);
    match result {
        Ok(r) => {
            outcome.correct = grade(&r.final_answer.answer, &q.gold_answer, &q.query);
            outcome.answer = r.final_answer.answer.clone();
            outcome.score = r.final_answer.confidence.score;
            outcome.frames = r.total_frames;
            outcome.iterations = r.iterations_used;
            outcome.terminated_by = Some(r.terminated_by.to_string());
            outcome.answer_interval = r.answer_interval;
            outcome.trace_hash = Some(r.trace.hash());
            if let Some(dir) = &opts.trace_dir {
                if let Err(e) = r.trace.write(dir.join(&q.id).join("trace.ndjson")) {
                    outcome.error = Some(e.to_string());
                }
            }
        }
        Err(e) => {
            if let (Error::SessionAborted { trace, .. }, Some(dir)) = (&e, &opts.trace_dir) {
                let _ = trace.write(dir.join(&q.id).join("trace.ndjson"));
            }
            outcome.error = Some(e.to_string());
        }
    }
    outcome
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot build worker pool: {e}")))
}

/// Runs every question of `suite` under `cfg`. Outcomes keep suite order
/// whatever the thread count.
pub fn run_suite(suite: &[SuiteWorld], cfg: &SessionConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let jobs: Vec<(Arc<ScriptedWorld>, &SuiteQuestion)> = suite
        .iter()
        .flat_map(|w| {
            let world = Arc::new(w.world.clone());
            w.questions.iter().map(move |q| (Arc::clone(&world), q))
        })
        .collect();
    let outcomes = pool(opts.threads)?.install(|| {
        jobs.par_iter()
            .map(|(world, q)| run_question(world, q, cfg, opts))
            .collect::<Vec<_>>()
    });
    Ok(RunReport::from_outcomes(cfg, outcomes))
}

/// The four standard configurations: full engine and one ablation each.
pub fn ablation_configs(base: &SessionConfig) -> Vec<(String, SessionConfig)> {
    let mut clean = base.clone();
    clean.ablation.clear();
    let mut out = vec![("full".to_string(), clean.clone())];
    for a in [Ablation::NoTm, Ablation::NoTcr, Ablation::NoRtp] {
        out.push((a.to_string(), clean.clone().with_ablation(a)));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub mean_frames: f64,
}

/// Runs the suite under each standard configuration for every seed.
pub fn ablate(suite: &[SuiteWorld], base: &SessionConfig, seeds: &[u64], opts: &RunOptions) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (label, cfg) in ablation_configs(base) {
        let mut accuracies = Vec::new();
        let mut frames = Vec::new();
        for &seed in seeds {
            let cfg = SessionConfig { seed, ..cfg.clone() };
            let report = run_suite(suite, &cfg, opts)?;
            accuracies.push(report.accuracy);
            frames.push(report.mean_frames);
        }
        let n = seeds.len().max(1) as f64;
        rows.push(AblationRow {
            config: label,
            seeds: seeds.to_vec(),
            mean_accuracy: accuracies.iter().sum::<f64>() / n,
            mean_frames: frames.iter().sum::<f64>() / n,
            accuracies,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub duration_s: f64,
    pub accuracy: f64,
    pub mean_frames: f64,
    pub frame_fraction: f64,
}

/// Runs `base` stretched to each duration and reports the frame fraction.
pub fn duration_sweep(
    base: &SuiteWorld,
    durations: &[f64],
    cfg: &SessionConfig,
    opts: &RunOptions,
) -> Result<Vec<SweepPoint>> {
    durations
        .iter()
        .map(|&d| {
            let world = stretch_world(base, d)?;
            let report = run_suite(std::slice::from_ref(&world), cfg, opts)?;
            let frame_count = world.world.videos[0].descriptor.frame_count as f64;
            Ok(SweepPoint {
                duration_s: d,
                accuracy: report.accuracy,
                mean_frames: report.mean_frames,
                frame_fraction: report.mean_frames / frame_count,
            })
        })
        .collect()
}
