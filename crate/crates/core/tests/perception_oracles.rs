use proptest::prelude::*;

use qtr_core::model::{TemporalInterval, VideoDescriptor};
use qtr_core::perception::{gelu, select_frames, semantic_variance, DensityProfile, Projector};

/// erf by its Maclaurin series; accurate to ~1e-13 for |x| <= 4.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-17 {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

/// Quantile of a piecewise-constant density by bisection on its CDF.
fn bisect_quantile(start: f64, end: f64, origin: f64, w: &[f64], q: f64) -> f64 {
    let cdf = |t: f64| -> f64 {
        let mut acc = 0.0;
        for (i, wi) in w.iter().enumerate() {
            let a = (origin + i as f64).max(start);
            let b = (origin + i as f64 + 1.0).min(t);
            if b > a {
                acc += wi * (b - a);
            }
        }
        acc
    };
    let target = q * cdf(end);
    let (mut lo, mut hi) = (start, end);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn gelu_matches_series() {
    for i in -400..=400 {
        let x = f64::from(i) / 100.0;
        let want = 0.5 * x * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
        assert!((gelu(x) - want).abs() < 1e-12, "x={x}: {} vs {want}", gelu(x));
    }
    assert_eq!(gelu(0.0), 0.0);
    assert!((gelu(30.0) - 30.0).abs() < 1e-12);
    assert!(gelu(-30.0).abs() < 1e-12);
}

#[test]
fn seeded_projector_is_deterministic() {
    let a = Projector::seeded(8, 16, 4, 7);
    let b = Projector::seeded(8, 16, 4, 7);
    let c = Projector::seeded(8, 16, 4, 8);
    let z = [0.1, -0.2, 0.3, 0.0, 1.0, 0.5, -0.7, 0.2];
    assert_eq!(a.project(&z).unwrap(), b.project(&z).unwrap());
    assert_ne!(a.project(&z).unwrap(), c.project(&z).unwrap());
    assert!(a.project(&z[..3]).is_err());
}

#[test]
fn identity_projector_applies_gelu() {
    let p = Projector::identity(3);
    let out = p.project(&[1.0, -1.0, 0.0]).unwrap();
    assert!((out[0] - gelu(1.0)).abs() < 1e-15);
    assert!((out[1] - gelu(-1.0)).abs() < 1e-15);
    assert_eq!(out[2], 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn selection_follows_inverse_cdf(
        start in 0u32..200,
        len in 10u32..60,
        frac in 0.0..0.9f64,
        weights in prop::collection::vec(0.5..4.0f64, 60),
        k in 2usize..16,
    ) {
        let fps = 100.0;
        let video = VideoDescriptor::new("v", 400.0, fps).unwrap();
        let s = f64::from(start) + frac;
        let interval = TemporalInterval::new(s, s + f64::from(len));
        let origin = s.floor();
        let density = DensityProfile { origin_s: origin, weights: weights.clone() };
        let times = select_frames(&interval, &video, &density, k);
        prop_assert_eq!(times.len(), k);
        for (i, t) in times.iter().enumerate() {
            let q = i as f64 / (k - 1) as f64;
            let want = bisect_quantile(interval.start_s, interval.end_s, origin, &weights, q);
            // Rounding to a frame, or clamping onto the first/last frame inside
            // the interval, moves a time by less than one frame period.
            prop_assert!((t - want).abs() < 1.0 / fps, "q={}: {} vs {}", q, t, want);
        }
    }

    #[test]
    fn selection_is_sorted_distinct_in_range(
        start in 0.0..500.0f64, len in 0.1..200.0f64, fps in prop_oneof![Just(1.0), Just(2.0), Just(29.97)],
        k in 1usize..32,
    ) {
        let video = VideoDescriptor::new("v", 800.0, fps).unwrap();
        let interval = TemporalInterval::new(start, (start + len).min(800.0));
        let times = select_frames(&interval, &video, &DensityProfile::uniform(&interval), k);
        prop_assert!(!times.is_empty() && times.len() <= k);
        let frames: Vec<u64> = times.iter().map(|t| (t * fps).round() as u64).collect();
        for w in frames.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        let last_frame = video.frame_count - 1;
        prop_assert!(frames.iter().all(|f| *f <= last_frame));
    }

    #[test]
    fn variance_is_squared_step(embs in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 2..10)) {
        let v = semantic_variance(&embs).unwrap();
        prop_assert_eq!(v.len(), embs.len() - 1);
        for (i, x) in v.iter().enumerate() {
            let want: f64 = embs[i].iter().zip(&embs[i + 1]).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!((x - want).abs() < 1e-12);
        }
    }
}
