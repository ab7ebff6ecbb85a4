//! Selective grounding of one interval: frame selection, embedding through
//! the vision port, a variance-driven reselection pass, token projection and
//! aggregation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{PortError, VisionPort};
use crate::model::{ReasoningEpisode, TemporalInterval, VideoDescriptor};
use crate::vector::{dot, mean, squared_distance};

/// Reselection triggers when the largest gap variance exceeds this multiple
/// of the median gap variance.
pub const RESELECT_FACTOR: f64 = 4.0;

pub const DEFAULT_BUDGET_K: usize = 16;

const DENSITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("semantic variance needs at least 2 embeddings, got {0}")]
    UndefinedVariance(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("aggregation over an empty token list")]
    EmptyInput,
    #[error("frame budget must be at least 1")]
    ZeroBudget,
    #[error("grounding episode {iteration} {interval}: {source}")]
    Port {
        iteration: u32,
        interval: TemporalInterval,
        #[source]
        source: PortError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSample {
    pub frame_index: u64,
    pub time_s: f64,
    pub embedding: Vec<f64>,
}

/// Two-layer token projector `t = W2 gelu(W1 z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    /// H x D, row-major.
    pub w1: Vec<Vec<f64>>,
    /// P x H, row-major.
    pub w2: Vec<Vec<f64>>,
}

impl Projector {
    pub fn new(w1: Vec<Vec<f64>>, w2: Vec<Vec<f64>>) -> Result<Self, PerceptionError> {
        let d = w1.first().map_or(0, Vec::len);
        if let Some(row) = w1.iter().find(|r| r.len() != d) {
            return Err(PerceptionError::DimensionMismatch { expected: d, found: row.len() });
        }
        let h = w1.len();
        if let Some(row) = w2.iter().find(|r| r.len() != h) {
            return Err(PerceptionError::DimensionMismatch { expected: h, found: row.len() });
        }
        Ok(Projector { w1, w2 })
    }

    pub fn identity(n: usize) -> Self {
        let eye: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Projector { w1: eye.clone(), w2: eye }
    }

    /// Uniform weights in `±sqrt(3 / fan_in)` from a seeded source.
    pub fn seeded(input_dim: usize, hidden_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
            let bound = (3.0 / cols.max(1) as f64).sqrt();
            (0..rows)
                .map(|_| (0..cols).map(|_| rng.gen_range(-bound..=bound)).collect())
                .collect()
        };
        let w1 = layer(hidden_dim, input_dim);
        let w2 = layer(output_dim, hidden_dim);
        Projector { w1, w2 }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.w2.len()
    }

    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>, PerceptionError> {
        if z.len() != self.input_dim() {
            return Err(PerceptionError::DimensionMismatch {
                expected: self.input_dim(),
                found: z.len(),
            });
        }
        let hidden: Vec<f64> = self.w1.iter().map(|row| gelu(dot(row, z))).collect();
        Ok(self.w2.iter().map(|row| dot(row, &hidden)).collect())
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    #[default]
    Mean,
    AttentionWeighted,
}

/// Piecewise-constant sampling weights, one per second starting at `origin_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub origin_s: f64,
    pub weights: Vec<f64>,
}

impl DensityProfile {
    pub fn uniform(interval: &TemporalInterval) -> Self {
        let cells = interval.len().ceil().max(1.0) as usize;
        DensityProfile {
            origin_s: interval.start_s,
            weights: vec![1.0; cells],
        }
    }

    pub fn weight_at_cell(&self, cell: usize) -> f64 {
        self.weights
            .get(cell)
            .or(self.weights.last())
            .copied()
            .filter(|w| w.is_finite() && *w > 0.0)
            .unwrap_or(1.0)
    }
}

/// Piecewise-linear inverse CDF of the density restricted to `interval`.
fn inverse_cdf(interval: &TemporalInterval, density: &DensityProfile, quantiles: &[f64]) -> Vec<f64> {
    let mut cells = Vec::new();
    let mut t = interval.start_s;
    while t < interval.end_s {
        let cell = ((t - density.origin_s).max(0.0)).floor() as usize;
        let next = (density.origin_s + (cell + 1) as f64).min(interval.end_s).max(t + 1e-9);
        let next = next.min(interval.end_s);
        cells.push((t, next, density.weight_at_cell(cell) * (next - t)));
        t = next;
    }
    let total: f64 = cells.iter().map(|c| c.2).sum();
    quantiles
        .iter()
        .map(|&q| {
            let target = q * total;
            let mut acc = 0.0;
            for &(a, b, m) in &cells {
                if acc + m >= target && m > 0.0 {
                    return a + (b - a) * ((target - acc) / m).clamp(0.0, 1.0);
                }
                acc += m;
            }
            interval.end_s
        })
        .collect()
}

/// Chooses up to `budget_k` frame times inside `interval` at evenly spaced
/// quantiles of `density`, endpoints included. Times that land on an already
/// chosen frame are moved to the nearest unused frame.
pub fn select_frames(
    interval: &TemporalInterval,
    video: &VideoDescriptor,
    density: &DensityProfile,
    budget_k: usize,
) -> Vec<f64> {
    let fps = video.fps;
    let last = video.frame_count.saturating_sub(1);
    let lo = ((interval.start_s * fps) - 1e-9).ceil().max(0.0) as u64;
    let hi = (((interval.end_s * fps) + 1e-9).floor().max(0.0) as u64).min(last);
    if budget_k == 0 {
        return Vec::new();
    }
    if hi < lo {
        return vec![interval.center()];
    }
    let available = (hi - lo + 1) as usize;
    if available <= budget_k {
        return (lo..=hi).map(|f| f as f64 / fps).collect();
    }
    let quantiles: Vec<f64> = if budget_k == 1 {
        vec![0.5]
    } else {
        (0..budget_k).map(|i| i as f64 / (budget_k - 1) as f64).collect()
    };
    let mut used = std::collections::BTreeSet::new();
    let mut times = Vec::with_capacity(budget_k);
    for t in inverse_cdf(interval, density, &quantiles) {
        let natural = (t * fps).round().max(0.0) as u64;
        let want = natural.clamp(lo, hi);
        let frame = nearest_unused(want, lo, hi, &used);
        used.insert(frame);
        if frame == natural && interval.contains_time(t) {
            times.push(t);
        } else {
            times.push(frame as f64 / fps);
        }
    }
    times.sort_by(f64::total_cmp);
    times
}

fn nearest_unused(want: u64, lo: u64, hi: u64, used: &std::collections::BTreeSet<u64>) -> u64 {
    if !used.contains(&want) {
        return want;
    }
    for d in 1..=(hi - lo) {
        if want + d <= hi && !used.contains(&(want + d)) {
            return want + d;
        }
        if want >= lo + d && !used.contains(&(want - d)) {
            return want - d;
        }
    }
    want
}

/// Squared Euclidean distance between consecutive embeddings.
pub fn semantic_variance(embeddings: &[Vec<f64>]) -> Result<Vec<f64>, PerceptionError> {
    if embeddings.len() < 2 {
        return Err(PerceptionError::UndefinedVariance(embeddings.len()));
    }
    Ok(embeddings
        .windows(2)
        .map(|w| squared_distance(&w[0], &w[1]))
        .collect())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Whether first-pass gap variances call for a denser second pass.
pub fn needs_reselection(variances: &[f64]) -> bool {
    let max = variances.iter().copied().fold(0.0, f64::max);
    max > 0.0 && max > RESELECT_FACTOR * median(variances)
}

/// Per-second weights `1 + sum(V_gap / median)` over the gaps each second
/// overlaps, so seconds spanning a large semantic jump are sampled densely.
pub fn density_from_variance(interval: &TemporalInterval, times: &[f64], variances: &[f64]) -> DensityProfile {
    let mut profile = DensityProfile::uniform(interval);
    let med = median(variances);
    for (gap, v) in times.windows(2).zip(variances) {
        let (a, b) = (gap[0] - interval.start_s, gap[1] - interval.start_s);
        let first = a.max(0.0).floor() as usize;
        let last = (b.max(0.0).ceil() as usize).max(first + 1);
        for cell in first..last.min(profile.weights.len()) {
            profile.weights[cell] += v / (med + DENSITY_EPS);
        }
    }
    profile
}

pub fn project_tokens(samples: &[FrameSample], proj: &Projector) -> Result<Vec<Vec<f64>>, PerceptionError> {
    samples.iter().map(|s| proj.project(&s.embedding)).collect()
}

pub fn aggregate_segment(projected: &[Vec<f64>], mode: AggregationMode) -> Result<Vec<f64>, PerceptionError> {
    let avg = mean(projected.iter().map(Vec::as_slice)).ok_or(PerceptionError::EmptyInput)?;
    match mode {
        AggregationMode::Mean => Ok(avg),
        AggregationMode::AttentionWeighted => {
            let scores: Vec<f64> = projected.iter().map(|t| dot(t, &avg)).collect();
            let weights = crate::tcr::softmax(&scores);
            let mut out = vec![0.0; avg.len()];
            for (w, t) in weights.iter().zip(projected) {
                for (o, x) in out.iter_mut().zip(t) {
                    *o += w * x;
                }
            }
            Ok(out)
        }
    }
}

/// Frame embeddings already obtained in this session, keyed by frame index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameCache {
    frames: BTreeMap<u64, Vec<f64>>,
}

impl FrameCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, frame: u64) -> Option<&Vec<f64>> {
        self.frames.get(&frame)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &Vec<f64>)> {
        self.frames.iter().map(|(k, v)| (*k, v))
    }

    /// Returns the embedding for `time_s`, calling the port only on a miss.
    /// The flag reports whether a port call was made.
    fn fetch(
        &mut self,
        vision: &dyn VisionPort,
        video: &VideoDescriptor,
        time_s: f64,
    ) -> Result<(Vec<f64>, bool), PortError> {
        let frame = video.frame_index(time_s);
        if let Some(v) = self.frames.get(&frame) {
            return Ok((v.clone(), false));
        }
        let v = vision.embed(&video.id, time_s)?;
        self.frames.insert(frame, v.clone());
        Ok((v, true))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub episode: ReasoningEpisode,
    /// Final sample set (the reselected one when reselection ran).
    pub samples: Vec<FrameSample>,
    pub first_pass_times: Vec<f64>,
    pub reselected: bool,
    pub projected: Vec<Vec<f64>>,
    pub aggregate: Vec<f64>,
    /// Mean of the raw sample embeddings.
    pub pooled: Vec<f64>,
    /// Vision-port embed calls made while grounding this episode.
    pub frame_cost: u64,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingOptions {
    pub budget_k: usize,
    pub mode: AggregationMode,
    /// Frames this call may embed in total. The reselection pass only runs
    /// when at least `budget_k` frames remain after the first pass.
    pub max_frames: u64,
}

impl Default for GroundingOptions {
    fn default() -> Self {
        GroundingOptions {
            budget_k: DEFAULT_BUDGET_K,
            mode: AggregationMode::Mean,
            max_frames: u64::MAX,
        }
    }
}

/// Frames chosen and embedded for one episode, before projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSegment {
    pub samples: Vec<FrameSample>,
    pub first_pass_times: Vec<f64>,
    pub reselected: bool,
    pub frame_cost: u64,
}

/// Uniform first pass, then at most one variance-driven reselection pass.
/// `frame_cost` counts every embed call made here, including first-pass
/// frames the reselection later discards; frames already in `cache` are free.
pub fn sample_segment(
    episode: &ReasoningEpisode,
    video: &VideoDescriptor,
    vision: &dyn VisionPort,
    cache: &mut FrameCache,
    opts: &GroundingOptions,
) -> Result<SampledSegment, PerceptionError> {
    if opts.budget_k == 0 {
        return Err(PerceptionError::ZeroBudget);
    }
    let interval = episode.interval;
    let port_err = |source| PerceptionError::Port {
        iteration: episode.iteration,
        interval,
        source,
    };
    let embed_all = |cache: &mut FrameCache, times: &[f64]| -> Result<(Vec<FrameSample>, u64), PerceptionError> {
        let mut fresh_count = 0u64;
        let samples = times
            .iter()
            .map(|&t| {
                let (embedding, fresh) = cache.fetch(vision, video, t).map_err(port_err)?;
                fresh_count += u64::from(fresh);
                Ok(FrameSample {
                    frame_index: video.frame_index(t),
                    time_s: t,
                    embedding,
                })
            })
            .collect::<Result<Vec<_>, PerceptionError>>()?;
        Ok((samples, fresh_count))
    };

    let first_times = select_frames(&interval, video, &DensityProfile::uniform(&interval), opts.budget_k);
    let (mut samples, first_cost) = embed_all(cache, &first_times)?;
    let mut cost = first_cost;
    let mut reselected = false;
    let room = opts.max_frames.saturating_sub(first_cost) >= opts.budget_k as u64;
    if room && samples.len() >= 2 {
        let embeddings: Vec<Vec<f64>> = samples.iter().map(|s| s.embedding.clone()).collect();
        let variances = semantic_variance(&embeddings)?;
        if needs_reselection(&variances) {
            let density = density_from_variance(&interval, &first_times, &variances);
            let times = select_frames(&interval, video, &density, opts.budget_k);
            let (again, fresh) = embed_all(cache, &times)?;
            samples = again;
            cost += fresh;
            reselected = true;
        }
    }
    Ok(SampledSegment {
        samples,
        first_pass_times: first_times,
        reselected,
        frame_cost: cost,
    })
}

/// Projects and aggregates sampled frames into evidence.
pub fn assemble_evidence(
    episode: &ReasoningEpisode,
    sampled: SampledSegment,
    proj: &Projector,
    mode: AggregationMode,
) -> Result<Evidence, PerceptionError> {
    let projected = project_tokens(&sampled.samples, proj)?;
    let aggregate = aggregate_segment(&projected, mode)?;
    let pooled = mean(sampled.samples.iter().map(|s| s.embedding.as_slice())).ok_or(PerceptionError::EmptyInput)?;
    Ok(Evidence {
        episode: episode.clone(),
        samples: sampled.samples,
        first_pass_times: sampled.first_pass_times,
        reselected: sampled.reselected,
        projected,
        aggregate,
        pooled,
        frame_cost: sampled.frame_cost,
        description: String::new(),
    })
}

pub fn ground_segment(
    episode: &ReasoningEpisode,
    video: &VideoDescriptor,
    vision: &dyn VisionPort,
    proj: &Projector,
    cache: &mut FrameCache,
    opts: &GroundingOptions,
) -> Result<Evidence, PerceptionError> {
    let sampled = sample_segment(episode, video, vision, cache, opts)?;
    assemble_evidence(episode, sampled, proj, opts.mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EpisodeOrigin;

    fn video(d: f64) -> VideoDescriptor {
        VideoDescriptor::new("v", d, 1.0).unwrap()
    }

    #[test]
    fn uniform_selection_includes_endpoints() {
        let i = TemporalInterval::new(0.0, 10.0);
        let t = select_frames(&i, &video(600.0), &DensityProfile::uniform(&i), 5);
        assert_eq!(t, vec![0.0, 2.5, 5.0, 7.5, 10.0]);
    }

    #[test]
    fn sub_frame_interval_yields_one_frame() {
        let i = TemporalInterval::new(0.0, 0.4);
        assert_eq!(select_frames(&i, &video(600.0), &DensityProfile::uniform(&i), 5), vec![0.0]);
        let j = TemporalInterval::new(0.3, 0.7);
        assert_eq!(select_frames(&j, &video(600.0), &DensityProfile::uniform(&j), 5).len(), 1);
    }

    #[test]
    fn k2_gives_endpoints() {
        let i = TemporalInterval::new(12.0, 40.0);
        assert_eq!(select_frames(&i, &video(600.0), &DensityProfile::uniform(&i), 2), vec![12.0, 40.0]);
    }

    #[test]
    fn variance_examples() {
        let v = semantic_variance(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(v, vec![1.0, 0.0]);
        let e1 = vec![1.0, 0.0];
        let e2 = vec![0.0, 1.0];
        assert_eq!(semantic_variance(&[e1.clone(), e2, e1]).unwrap(), vec![2.0, 2.0]);
        assert_eq!(semantic_variance(&[vec![1.0]]), Err(PerceptionError::UndefinedVariance(1)));
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_543).abs() < 1e-12);
        let p = Projector::identity(1);
        assert!((p.project(&[1.0]).unwrap()[0] - 0.841_344_746_068_543).abs() < 1e-12);
    }

    #[test]
    fn aggregation_examples() {
        let m = aggregate_segment(&[vec![1.0, 0.0], vec![0.0, 1.0]], AggregationMode::Mean).unwrap();
        assert_eq!(m, vec![0.5, 0.5]);
        let same = vec![vec![0.3, -1.0]; 4];
        let a = aggregate_segment(&same, AggregationMode::AttentionWeighted).unwrap();
        assert!(a.iter().zip(&same[0]).all(|(x, y)| (x - y).abs() < 1e-12));
        assert_eq!(aggregate_segment(&[], AggregationMode::Mean), Err(PerceptionError::EmptyInput));
    }

    struct Constant;
    impl VisionPort for Constant {
        fn embed(&self, _: &str, _: f64) -> Result<Vec<f64>, PortError> {
            Ok(vec![1.0, 2.0])
        }
        fn describe(&self, _: &str, _: &TemporalInterval) -> Result<String, PortError> {
            Ok(String::new())
        }
    }

    #[test]
    fn constant_video_skips_reselection() {
        let ep = ReasoningEpisode {
            iteration: 1,
            intent: "x".into(),
            interval: TemporalInterval::new(10.0, 100.0),
            origin: EpisodeOrigin::Planned,
        };
        let mut cache = FrameCache::new();
        let opts = GroundingOptions { budget_k: 8, ..Default::default() };
        let ev = ground_segment(&ep, &video(600.0), &Constant, &Projector::identity(2), &mut cache, &opts).unwrap();
        assert_eq!(ev.samples.len(), 8);
        assert!(!ev.reselected);
        assert_eq!(ev.frame_cost, 8);
        // Re-grounding the same span hits the cache.
        let again = ground_segment(&ep, &video(600.0), &Constant, &Projector::identity(2), &mut cache, &opts).unwrap();
        assert_eq!(again.frame_cost, 0);
    }
}
