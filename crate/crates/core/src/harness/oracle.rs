//! Brute-force localisation oracle: scans the whole timeline in consecutive
//! cap-length windows with the per-segment frame budget and keeps the window
//! whose best frame is most similar to the query.

use serde::{Deserialize, Serialize};

use super::SuiteQuestion;
use crate::backends::scripted::ScriptedWorld;
use crate::backends::PortError;
use crate::model::TemporalInterval;
use crate::vector::{dot, norm};

/// Similarity margin above the background level below which a peak is
/// treated as embedding noise rather than an event.
pub const NOISE_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window: TemporalInterval,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub question_id: String,
    /// Window holding the best-scoring frame (earliest on ties).
    pub answer_interval: TemporalInterval,
    pub best_score: f64,
    /// Median frame score plus three robust standard deviations plus margin.
    pub threshold: f64,
    pub found: bool,
    pub frames_scanned: u64,
    pub windows: Vec<WindowScore>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Scans `question`'s video in windows of `cap` seconds with `k` evenly
/// spaced frames each (both window ends included).
pub fn brute_force_oracle(
    world: &ScriptedWorld,
    question: &SuiteQuestion,
    cap: f64,
    k: usize,
) -> Result<OracleResult, PortError> {
    let video = world.video(&question.query.video)?;
    let duration = video.descriptor.duration_s;
    let q = world.embed_text(&question.query.text);
    let n_windows = (duration / cap).ceil().max(1.0) as usize;

    let mut windows = Vec::with_capacity(n_windows);
    let mut all = Vec::new();
    for w in 0..n_windows {
        let start = w as f64 * cap;
        let end = ((w + 1) as f64 * cap).min(duration);
        let window = TemporalInterval::new(start, end);
        let mut best = f64::NEG_INFINITY;
        for j in 0..k {
            let t = if k == 1 {
                window.center()
            } else {
                start + (end - start) * j as f64 / (k - 1) as f64
            };
            let s = cosine(&world.scripted_embed(&video.descriptor.id, t)?, &q);
            all.push(s);
            best = best.max(s);
        }
        windows.push(WindowScore { window, score: best });
    }

    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let med = median(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let sigma = 1.4826 * median(&dev);
    let threshold = med + 3.0 * sigma + NOISE_MARGIN;

    let best = windows
        .iter()
        .reduce(|a, b| if b.score > a.score { b } else { a })
        .expect("at least one window");
    Ok(OracleResult {
        question_id: question.id.clone(),
        answer_interval: best.window,
        best_score: best.score,
        threshold,
        found: best.score > threshold,
        frames_scanned: all.len() as u64,
        windows,
    })
}
