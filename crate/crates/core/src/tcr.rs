//! Temporal consistency refinement: alignment of an episode's intent with the
//! timeline, the consistency loss and its gradient, and the refinement delta
//! handed back to the planner.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BudgetConfig, TemporalInterval, VideoDescriptor};
use crate::perception::FrameCache;
use crate::vector::{dot, norm};

/// Number of bins per segment-cap length.
pub const BINS_PER_CAP: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TcrError {
    #[error("cosine similarity undefined for a zero vector")]
    UndefinedSimilarity,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("alignment needs at least one bin")]
    NoBins,
    #[error("planned bin {index} out of range for {bins} bins")]
    BinOutOfRange { index: usize, bins: usize },
    #[error("{distributions} distributions but {targets} planned bins")]
    LengthMismatch { distributions: usize, targets: usize },
    #[error("loss needs at least one term")]
    Empty,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, TcrError> {
    if a.len() != b.len() {
        return Err(TcrError::DimensionMismatch(a.len(), b.len()));
    }
    let d = norm(a) * norm(b);
    if d == 0.0 || !d.is_finite() {
        return Err(TcrError::UndefinedSimilarity);
    }
    Ok((dot(a, b) / d).clamp(-1.0, 1.0))
}

/// Softmax with the maximum subtracted before exponentiation.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub scores: Vec<f64>,
    pub distribution: Vec<f64>,
    pub bin_width_s: f64,
    /// Timeline bin index of each entry (bin `b` spans `[b*w, (b+1)*w]`).
    pub bins: Vec<usize>,
}

/// Cosine scores of each bin feature against the episode embedding and
/// their softmax. Bins are numbered `0..n` in feature order.
pub fn alignment_distribution(
    episode_embedding: &[f64],
    bin_features: &[Vec<f64>],
    bin_width_s: f64,
) -> Result<AlignmentResult, TcrError> {
    if bin_features.is_empty() {
        return Err(TcrError::NoBins);
    }
    let scores = bin_features
        .iter()
        .map(|f| cosine_similarity(episode_embedding, f))
        .collect::<Result<Vec<_>, _>>()?;
    let distribution = softmax(&scores);
    Ok(AlignmentResult {
        scores,
        distribution,
        bin_width_s,
        bins: (0..bin_features.len()).collect(),
    })
}

pub fn bin_width(cfg: &BudgetConfig) -> f64 {
    cfg.max_segment_s / BINS_PER_CAP
}

fn bin_of(time_s: f64, width: f64, video: &VideoDescriptor) -> usize {
    let last = ((video.duration_s / width).ceil() as usize).saturating_sub(1);
    ((time_s / width).floor().max(0.0) as usize).min(last)
}

/// Mean embedding of the frames observed so far in each timeline bin.
/// Bins without observed frames are omitted.
pub fn observed_bin_features(
    cache: &FrameCache,
    video: &VideoDescriptor,
    width: f64,
) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut sums: std::collections::BTreeMap<usize, (Vec<f64>, f64)> = Default::default();
    for (frame, emb) in cache.iter() {
        let t = frame as f64 / video.fps;
        let entry = sums
            .entry(bin_of(t, width, video))
            .or_insert_with(|| (vec![0.0; emb.len()], 0.0));
        for (a, x) in entry.0.iter_mut().zip(emb) {
            *a += x;
        }
        entry.1 += 1.0;
    }
    sums.into_iter()
        .map(|(b, (sum, n))| (b, sum.into_iter().map(|x| x / n).collect::<Vec<f64>>()))
        .unzip()
}

/// Alignment over the observed bins of a session's frame cache.
pub fn align_with_cache(
    episode_embedding: &[f64],
    cache: &FrameCache,
    video: &VideoDescriptor,
    width: f64,
) -> Result<AlignmentResult, TcrError> {
    let (bins, features) = observed_bin_features(cache, video, width);
    let mut result = alignment_distribution(episode_embedding, &features, width)?;
    result.bins = bins;
    Ok(result)
}

fn residual_norm(p: &[f64], target: usize) -> f64 {
    p.iter()
        .enumerate()
        .map(|(i, x)| {
            let r = if i == target { x - 1.0 } else { *x };
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

fn check_terms(distributions: &[Vec<f64>], planned_bins: &[usize]) -> Result<(), TcrError> {
    if distributions.is_empty() {
        return Err(TcrError::Empty);
    }
    if distributions.len() != planned_bins.len() {
        return Err(TcrError::LengthMismatch {
            distributions: distributions.len(),
            targets: planned_bins.len(),
        });
    }
    for (p, &b) in distributions.iter().zip(planned_bins) {
        if b >= p.len() {
            return Err(TcrError::BinOutOfRange { index: b, bins: p.len() });
        }
    }
    Ok(())
}

/// Mean over episodes of `||P_t - onehot(planned_t)||_2`.
pub fn tcr_loss(distributions: &[Vec<f64>], planned_bins: &[usize]) -> Result<f64, TcrError> {
    check_terms(distributions, planned_bins)?;
    let total: f64 = distributions
        .iter()
        .zip(planned_bins)
        .map(|(p, &b)| residual_norm(p, b))
        .sum();
    Ok(total / distributions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGradient {
    /// dL/dP_t per term.
    pub terms: Vec<Vec<f64>>,
    /// Terms whose residual is exactly zero; their gradient is reported as zero.
    pub degenerate: Vec<bool>,
}

pub fn tcr_loss_gradient(distributions: &[Vec<f64>], planned_bins: &[usize]) -> Result<LossGradient, TcrError> {
    check_terms(distributions, planned_bins)?;
    let t = distributions.len() as f64;
    let mut terms = Vec::with_capacity(distributions.len());
    let mut degenerate = Vec::with_capacity(distributions.len());
    for (p, &b) in distributions.iter().zip(planned_bins) {
        let n = residual_norm(p, b);
        if n == 0.0 {
            terms.push(vec![0.0; p.len()]);
            degenerate.push(true);
            continue;
        }
        terms.push(
            p.iter()
                .enumerate()
                .map(|(i, x)| (if i == b { x - 1.0 } else { *x }) / (t * n))
                .collect(),
        );
        degenerate.push(false);
    }
    Ok(LossGradient { terms, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementDelta {
    pub suggested_center_s: f64,
    pub scale: f64,
    /// This episode's loss term.
    pub loss_contribution: f64,
    /// The best-aligned bin differs from the planned one.
    pub redirect: bool,
}

impl RefinementDelta {
    pub fn identity(interval: &TemporalInterval) -> Self {
        RefinementDelta {
            suggested_center_s: interval.center(),
            scale: 1.0,
            loss_contribution: 0.0,
            redirect: false,
        }
    }
}

/// Position of the planned bin in `alignment.bins`; the nearest observed
/// bin (earliest on ties) when the planned bin itself was not observed.
pub fn planned_position(alignment: &AlignmentResult, planned: &TemporalInterval, video: &VideoDescriptor) -> usize {
    let target = bin_of(planned.center(), alignment.bin_width_s, video);
    alignment
        .bins
        .iter()
        .enumerate()
        .min_by_key(|(_, &b)| b.abs_diff(target))
        .map_or(0, |(i, _)| i)
}

fn argmax_earliest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn make_refinement_delta(
    alignment: &AlignmentResult,
    planned: &TemporalInterval,
    video: &VideoDescriptor,
) -> RefinementDelta {
    let pos = planned_position(alignment, planned, video);
    let term = residual_norm(&alignment.distribution, pos);
    let best = argmax_earliest(&alignment.distribution);
    let redirect = alignment.bins[best] != bin_of(planned.center(), alignment.bin_width_s, video);
    let center = if redirect {
        (alignment.bins[best] as f64 + 0.5) * alignment.bin_width_s
    } else {
        planned.center()
    };
    RefinementDelta {
        suggested_center_s: center.clamp(0.0, video.duration_s),
        scale: (1.0 - term / SQRT_2).max(0.25),
        loss_contribution: term,
        redirect,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.707_106_781_186_547_5).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), Err(TcrError::UndefinedSimilarity));
    }

    #[test]
    fn distribution_examples() {
        let a = alignment_distribution(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]], 30.0).unwrap();
        let e = std::f64::consts::E;
        assert!((a.distribution[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((a.distribution[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        let one = alignment_distribution(&[1.0], &[vec![2.0]], 30.0).unwrap();
        assert_eq!(one.distribution, vec![1.0]);
        let same = alignment_distribution(&[1.0, 1.0], &vec![vec![1.0, 1.0]; 3], 30.0).unwrap();
        assert!(same.distribution.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn loss_examples() {
        assert_eq!(tcr_loss(&[vec![1.0, 0.0]], &[0]).unwrap(), 0.0);
        assert!((tcr_loss(&[vec![0.5, 0.5]], &[0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(tcr_loss(&[vec![0.0, 1.0]], &[0]).unwrap(), SQRT_2);
        assert!(matches!(tcr_loss(&[vec![1.0]], &[3]), Err(TcrError::BinOutOfRange { .. })));
    }

    #[test]
    fn gradient_examples() {
        let g = tcr_loss_gradient(&[vec![0.5, 0.5]], &[0]).unwrap();
        assert!((g.terms[0][0] + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((g.terms[0][1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let two = tcr_loss_gradient(&[vec![0.5, 0.5], vec![0.5, 0.5]], &[0, 0]).unwrap();
        assert!((two.terms[0][0] - g.terms[0][0] / 2.0).abs() < 1e-15);
        let d = tcr_loss_gradient(&[vec![1.0, 0.0]], &[0]).unwrap();
        assert_eq!(d.terms[0], vec![0.0, 0.0]);
        assert!(d.degenerate[0]);
    }

    fn video() -> VideoDescriptor {
        VideoDescriptor::new("v", 600.0, 1.0).unwrap()
    }

    #[test]
    fn delta_identity_when_consistent() {
        let planned = TemporalInterval::new(0.0, 50.0);
        let a = AlignmentResult {
            scores: vec![1.0, 0.0],
            distribution: vec![1.0, 0.0],
            bin_width_s: 30.0,
            bins: vec![0, 1],
        };
        let d = make_refinement_delta(&a, &planned, &video());
        assert_eq!(d, RefinementDelta::identity(&planned));
    }

    #[test]
    fn delta_moves_to_argmax_and_clamps_scale() {
        let planned = TemporalInterval::new(0.0, 50.0);
        let a = AlignmentResult {
            scores: vec![0.0, 1.0],
            distribution: vec![0.0, 1.0],
            bin_width_s: 30.0,
            bins: vec![0, 15],
        };
        let d = make_refinement_delta(&a, &planned, &video());
        assert_eq!(d.suggested_center_s, 465.0);
        assert_eq!(d.scale, 0.25);
        assert!(d.redirect);
        assert_eq!(d.loss_contribution, SQRT_2);
    }
}
