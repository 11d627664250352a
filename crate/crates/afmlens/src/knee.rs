//! Knee detection on AFM-vs-NLM envelope curves.
//!
//! The envelope of a joined dataset is the per-bucket upper-quantile AFM
//! value as a function of the NLM bucket center: the boundary under which
//! almost all observations sit. Detection normalizes the envelope to the
//! unit square, reorients it by curve direction so that any knee becomes a
//! peak of the difference curve `d = y - x`, and picks the highest interior
//! local maximum. The peak height is the knee's *curvature*: a value in
//! [0, 1] that grows with how sharply the envelope bends, so one threshold
//! works across datasets regardless of units or scale.

use crate::error::{Error, Result};
use crate::model::KneeDirection;
use crate::stats;

/// Envelope curve: `(x, y)` points with strictly increasing x.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeCurve {
    points: Vec<(f64, f64)>,
    direction: KneeDirection,
    /// Width of the buckets the curve was built from, in x units.
    bucket_width: f64,
}

impl EnvelopeCurve {
    /// Validates and wraps points. Needs at least four points with strictly
    /// increasing finite x (fewer cannot hold an interior local maximum
    /// worth trusting); `bucket_width` must be positive.
    pub fn new(
        points: Vec<(f64, f64)>,
        direction: KneeDirection,
        bucket_width: f64,
    ) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::TooFewBuckets {
                context: "envelope curve",
                needed: 4,
                got: points.len(),
            });
        }
        if !bucket_width.is_finite() || bucket_width <= 0.0 {
            return Err(Error::InvalidCurve(
                "envelope bucket width must be positive",
            ));
        }
        for &(x, y) in &points {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::InvalidCurve("envelope points must be finite"));
            }
        }
        for pair in points.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::InvalidCurve(
                    "envelope x values must strictly increase",
                ));
            }
        }
        Ok(Self {
            points,
            direction,
            bucket_width,
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn direction(&self) -> KneeDirection {
        self.direction
    }

    pub fn bucket_width(&self) -> f64 {
        self.bucket_width
    }
}

/// A detected knee.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KneeResult {
    /// x of the envelope point at the knee.
    pub knee_x: f64,
    /// Normalized difference-curve height at the knee, in [0, 1].
    pub curvature: f64,
    /// Index of the knee point within the envelope's points.
    pub bucket_index: usize,
}

/// Builds the envelope of `(x, y)` samples: `n_buckets` equal-width x
/// buckets over `[min x, max x]`, each summarized by its `env_quantile`
/// y value. Buckets with fewer than `min_bucket_samples` samples are
/// dropped; at least four must survive.
pub fn build_envelope(
    samples: &[(f64, f64)],
    n_buckets: usize,
    env_quantile: f64,
    min_bucket_samples: usize,
    direction: KneeDirection,
) -> Result<EnvelopeCurve> {
    if samples.is_empty() {
        return Err(Error::Empty {
            what: "envelope samples",
        });
    }
    if !(0.0..=1.0).contains(&env_quantile) {
        return Err(Error::FractionOutOfRange {
            field: "env_quantile",
            lo: 0.0,
            hi: 1.0,
            value: env_quantile,
        });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(x, y) in samples {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite {
                field: "envelope sample",
                value: if x.is_finite() { y } else { x },
            });
        }
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if n_buckets < 4 {
        return Err(Error::TooFewBuckets {
            context: "build_envelope",
            needed: 4,
            got: n_buckets,
        });
    }
    let width = (hi - lo) / n_buckets as f64;
    if width <= 0.0 {
        return Err(Error::TooFewBuckets {
            context: "build_envelope: zero x spread puts all samples in one bucket",
            needed: 4,
            got: 1,
        });
    }
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n_buckets];
    for &(x, y) in samples {
        let idx = (((x - lo) / width) as usize).min(n_buckets - 1);
        buckets[idx].push(y);
    }
    let points: Vec<(f64, f64)> = buckets
        .into_iter()
        .enumerate()
        .filter(|(_, ys)| ys.len() >= min_bucket_samples.max(1))
        .map(|(i, ys)| {
            (
                lo + (i as f64 + 0.5) * width,
                stats::quantile_type7(&ys, env_quantile),
            )
        })
        .collect();
    if points.len() < 4 {
        return Err(Error::TooFewBuckets {
            context: "build_envelope: too few populated buckets",
            needed: 4,
            got: points.len(),
        });
    }
    EnvelopeCurve::new(points, direction, width)
}

/// Finds the knee of an envelope curve, if any reaches `curvature_threshold`.
///
/// Steps: normalize both axes to [0, 1]; reorient by direction so the knee
/// region maps to a difference-curve peak (convex-increasing curves reflect
/// both axes, concave-decreasing only x); compute `d = y - x` on the
/// reoriented curve; collect interior local maxima; drop those below the
/// threshold; return the highest, breaking exact ties toward the smallest
/// original x. A curve with no y spread has no knee.
pub fn detect_knee(curve: &EnvelopeCurve, curvature_threshold: f64) -> Result<Option<KneeResult>> {
    if !curvature_threshold.is_finite() || curvature_threshold <= 0.0 || curvature_threshold >= 1.0
    {
        return Err(Error::FractionOutOfRange {
            field: "curvature_threshold",
            lo: 0.0,
            hi: 1.0,
            value: curvature_threshold,
        });
    }
    let pts = curve.points();
    let n = pts.len();
    let (x_min, x_max) = (pts[0].0, pts[n - 1].0);
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for &(_, y) in pts {
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if y_max == y_min {
        return Ok(None);
    }

    // Reorient so x ascends and the knee becomes a peak of d = y - x.
    // Both directions reflect x, which reverses point order; convex
    // curves also flip y. `transformed[j]` corresponds to the original
    // point at index n-1-j.
    let mut d = Vec::with_capacity(n);
    for j in 0..n {
        let (x, y) = pts[n - 1 - j];
        let xn = (x - x_min) / (x_max - x_min);
        let yn = (y - y_min) / (y_max - y_min);
        let (xt, yt) = match curve.direction() {
            KneeDirection::ConvexIncreasing => (1.0 - xn, 1.0 - yn),
            KneeDirection::ConcaveDecreasing => (1.0 - xn, yn),
        };
        d.push((xt, yt - xt));
    }

    let mut best: Option<(f64, usize)> = None;
    for j in 1..n - 1 {
        let dj = d[j].1;
        if dj < d[j - 1].1 || dj < d[j + 1].1 || dj < curvature_threshold {
            continue;
        }
        let orig = n - 1 - j;
        let replace = match best {
            None => true,
            Some((best_d, best_orig)) => {
                dj > best_d || (dj == best_d && pts[orig].0 < pts[best_orig].0)
            }
        };
        if replace {
            best = Some((dj, orig));
        }
    }
    Ok(best.map(|(curvature, idx)| KneeResult {
        knee_x: pts[idx].0,
        curvature,
        bucket_index: idx,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        (0..=n)
            .map(|i| {
                let x = i as f64 / n as f64;
                (x, f(x))
            })
            .collect()
    }

    fn curve(points: Vec<(f64, f64)>, dir: KneeDirection) -> EnvelopeCurve {
        let w = points[1].0 - points[0].0;
        EnvelopeCurve::new(points, dir, w).unwrap()
    }

    #[test]
    fn envelope_buckets_use_upper_quantile() {
        let mut samples: Vec<(f64, f64)> = Vec::new();
        for y in 1..=100 {
            samples.push((0.1, y as f64));
        }
        for (x, y) in [(0.3, 1.0), (0.5, 2.0), (0.7, 3.0)] {
            for _ in 0..3 {
                samples.push((x, y));
            }
        }
        let env = build_envelope(&samples, 4, 0.95, 1, KneeDirection::ConvexIncreasing).unwrap();
        let pts = env.points();
        assert_eq!(pts.len(), 4);
        assert!((pts[0].1 - 95.05).abs() < 1e-9, "got {}", pts[0].1);
        assert!((env.bucket_width() - 0.15).abs() < 1e-12);
        for pair in pts.windows(2) {
            assert!(pair[1].0 > pair[0].0);
        }
    }

    #[test]
    fn envelope_needs_four_populated_buckets() {
        let samples = vec![(0.1, 1.0), (0.2, 2.0), (0.9, 3.0)];
        assert!(matches!(
            build_envelope(&samples, 4, 0.95, 1, KneeDirection::ConvexIncreasing),
            Err(Error::TooFewBuckets { .. })
        ));
        let same_x = vec![(0.5, 1.0); 10];
        assert!(build_envelope(&same_x, 4, 0.95, 1, KneeDirection::ConvexIncreasing).is_err());
    }

    #[test]
    fn parabola_knee_is_at_half_with_quarter_curvature() {
        let env = curve(grid(200, |x| x * x), KneeDirection::ConvexIncreasing);
        let knee = detect_knee(&env, 0.2).unwrap().expect("knee expected");
        assert!((knee.knee_x - 0.5).abs() < 1e-9, "knee_x {}", knee.knee_x);
        assert!((knee.curvature - 0.25).abs() < 1e-9);
        assert_eq!(env.points()[knee.bucket_index].0, knee.knee_x);

        // The same curve clears no threshold above its curvature.
        assert!(detect_knee(&env, 0.3).unwrap().is_none());
        assert!(detect_knee(&env, 0.25).unwrap().is_some());
    }

    #[test]
    fn straight_line_has_no_knee() {
        let env = curve(grid(50, |x| x), KneeDirection::ConvexIncreasing);
        assert!(detect_knee(&env, 0.05).unwrap().is_none());
        let env = curve(grid(50, |x| 3.0 * x + 2.0), KneeDirection::ConvexIncreasing);
        assert!(detect_knee(&env, 0.05).unwrap().is_none());
    }

    #[test]
    fn flat_curve_has_no_knee() {
        let env = curve(grid(50, |_| 2.0), KneeDirection::ConvexIncreasing);
        assert!(detect_knee(&env, 0.05).unwrap().is_none());
    }

    #[test]
    fn concave_decreasing_quarter_circle_knee() {
        // y = sqrt(1 - x^2): the knee of the unit quarter circle sits at
        // x = sqrt(2)/2 with difference height sqrt(2) - 1.
        let env = curve(
            grid(200, |x| (1.0 - x * x).max(0.0).sqrt()),
            KneeDirection::ConcaveDecreasing,
        );
        let knee = detect_knee(&env, 0.3).unwrap().expect("knee expected");
        assert!(
            (knee.knee_x - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01,
            "knee_x {}",
            knee.knee_x
        );
        assert!((knee.curvature - (std::f64::consts::SQRT_2 - 1.0)).abs() < 0.005);
        assert!(detect_knee(&env, 0.42).unwrap().is_none());
    }

    #[test]
    fn curvature_is_invariant_to_affine_y_rescale() {
        let base = grid(100, |x| x * x * x);
        let scaled: Vec<(f64, f64)> = base.iter().map(|&(x, y)| (x, 7.5 * y + 3.0)).collect();
        let k1 = detect_knee(&curve(base, KneeDirection::ConvexIncreasing), 0.2).unwrap();
        let k2 = detect_knee(&curve(scaled, KneeDirection::ConvexIncreasing), 0.2).unwrap();
        assert_eq!(k1, k2);
        let k = k1.expect("cubic has a knee above 0.2");
        assert!(k.curvature > 0.2 && k.curvature < 1.0);
    }

    #[test]
    fn exact_ties_break_toward_smallest_original_x() {
        // Constructed so the transformed difference curve is
        // [0, 0.2, 0.05, 0.2, 0]: two equal peaks.
        let ys = [0.0, 0.05, 0.45, 0.55, 1.0];
        let points: Vec<(f64, f64)> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| (i as f64 * 0.25, y))
            .collect();
        let env = curve(points, KneeDirection::ConvexIncreasing);
        let knee = detect_knee(&env, 0.1)
            .unwrap()
            .expect("two candidate knees");
        assert!((knee.knee_x - 0.25).abs() < 1e-12, "knee_x {}", knee.knee_x);
        assert!((knee.curvature - 0.2).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_inclusive() {
        // Dyadic ordinates so the peak difference is exactly representable:
        // transformed difference curve is [0, 0.1875, 0.0625, 0.125, 0].
        let ys = [0.0, 0.0625, 0.4375, 0.625, 1.0];
        let points: Vec<(f64, f64)> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| (i as f64 * 0.25, y))
            .collect();
        let env = curve(points, KneeDirection::ConvexIncreasing);
        // Peak height is exactly 0.1875; a threshold of exactly 0.1875 keeps it.
        assert!(detect_knee(&env, 0.1875).unwrap().is_some());
        assert!(detect_knee(&env, 0.1876).unwrap().is_none());
    }

    #[test]
    fn rejects_malformed_curves_and_thresholds() {
        assert!(EnvelopeCurve::new(
            vec![(0.0, 1.0), (0.1, 2.0), (0.2, 3.0)],
            KneeDirection::ConvexIncreasing,
            0.1,
        )
        .is_err());
        assert!(EnvelopeCurve::new(
            vec![(0.0, 1.0), (0.1, 2.0), (0.1, 3.0), (0.2, 4.0)],
            KneeDirection::ConvexIncreasing,
            0.1,
        )
        .is_err());
        let env = curve(grid(10, |x| x * x), KneeDirection::ConvexIncreasing);
        assert!(detect_knee(&env, 0.0).is_err());
        assert!(detect_knee(&env, 1.0).is_err());
    }

    #[test]
    fn raising_threshold_never_moves_a_knee_only_removes_it() {
        let env = curve(grid(80, |x| x.powi(4)), KneeDirection::ConvexIncreasing);
        let mut last_pos: Option<f64> = None;
        let mut seen_none = false;
        for t in [0.05, 0.1, 0.3, 0.5, 0.7, 0.8] {
            match detect_knee(&env, t).unwrap() {
                Some(k) => {
                    assert!(!seen_none, "knee reappeared after disappearing");
                    if let Some(prev) = last_pos {
                        assert_eq!(prev, k.knee_x);
                    }
                    last_pos = Some(k.knee_x);
                }
                None => seen_none = true,
            }
        }
        assert!(last_pos.is_some(), "x^4 must show a knee at low thresholds");
    }
}
