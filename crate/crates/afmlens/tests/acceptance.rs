//! Acceptance gate: end-to-end checks of the shipped pipeline against
//! constructed oracles with known ground truth. Each test prints one
//! `ACCEPTANCE <n> <name>: PASS|FAIL` line.

use std::time::Instant;

use afmlens::ingestion::{
    join_series, parse_afm_records, parse_port_records, reaggregate_nlm, Format,
};
use afmlens::knee::{detect_knee, EnvelopeCurve};
use afmlens::model::{
    AfmKind, JoinedSample, KneeDirection, MetricKind, ModelKind, PipelineConfig, QosClass, Scope,
};
use afmlens::pipeline::{
    best_scored, fit_pair, overprediction_fraction, split_at, stability_sweep,
};
use afmlens::regression::{amse, rarmse};
use afmlens::rng::SplitMix64;
use afmlens::sketch::QuantileSketch;
use afmlens::synthgen::{emit_files, AfmMode, EmitOptions, GeneratorSpec};
use afmlens::Error;

const WEEK_S: i64 = 7 * 86400;

fn criterion<F>(n: u32, name: &str, body: F)
where
    F: FnOnce() + std::panic::UnwindSafe,
{
    let result = std::panic::catch_unwind(body);
    let status = if result.is_ok() { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {n} {name}: {status}");
    if let Err(cause) = result {
        std::panic::resume_unwind(cause);
    }
}

fn latency_kind() -> AfmKind {
    "transmit_latency:64KiB:p99".parse().expect("valid kind")
}

/// Median-quantile config: with multiplicative lognormal noise the
/// conditional median equals the generator's base curve exactly, so
/// parameter recovery is checked against the true (beta, c).
fn median_cfg() -> PipelineConfig {
    PipelineConfig {
        target_quantile: 0.5,
        ..PipelineConfig::default()
    }
}

fn halves(samples: &[JoinedSample]) -> (Vec<JoinedSample>, Vec<JoinedSample>) {
    let mid = samples[samples.len() / 2].window_start;
    split_at(samples, mid)
}

/// Hand-built dataset on a uniform x grid over [0, 1]: linear base with a
/// quadratic bend beyond `knee_x` and per-index lognormal noise. The exact
/// [0, 1] span makes each envelope bucket exactly 0.05 wide.
fn knee_bend_samples(
    n: usize,
    seed: u64,
    knee_x: f64,
    penalty: f64,
    sigma: f64,
) -> Vec<JoinedSample> {
    (0..n)
        .map(|i| {
            let x = i as f64 / (n - 1) as f64;
            let mut base = 2.0 * x + 1.0;
            if x > knee_x {
                base += penalty * (x - knee_x) * (x - knee_x);
            }
            let mut rng = SplitMix64::fork(seed, i as u64);
            let y = base * (sigma * rng.next_standard_normal()).exp();
            JoinedSample {
                fabric: "synth".into(),
                window_start: i as i64 * 300,
                window_len: 300,
                scope: Scope::FabricWide,
                qos: QosClass::High,
                nlm_kind: MetricKind::MaxLinkUtilization,
                nlm_value: x,
                afm_kind: latency_kind(),
                afm_value: y,
            }
        })
        .collect()
}

#[test]
fn acceptance_01_queueing_recovery() {
    criterion(1, "queueing recovery", || {
        let started = Instant::now();
        let spec = GeneratorSpec {
            kind: ModelKind::Queueing,
            beta: 3.0,
            c: 0.5,
            sigma: 0.05,
            n: 50_000,
            seed: 7,
            ..GeneratorSpec::example(ModelKind::Queueing)
        };
        let samples = spec.generate().unwrap();
        let (train, test) = halves(&samples);
        let report = fit_pair(&train, &test, &median_cfg()).unwrap();
        let model = report.selected.expect("verdict accurate");
        assert_eq!(model.kind, ModelKind::Queueing);
        assert!(
            (model.slope - 3.0).abs() <= 0.15,
            "beta {} not within 5%",
            model.slope
        );
        assert!(
            (model.intercept - 0.5).abs() <= 0.05,
            "c {} not within 10%",
            model.intercept
        );
        let elapsed = started.elapsed();
        assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    });
}

#[test]
fn acceptance_02_linear_recovery() {
    criterion(2, "linear recovery", || {
        let spec = GeneratorSpec {
            kind: ModelKind::Linear,
            beta: 2.0,
            c: 1.0,
            sigma: 0.05,
            n: 50_000,
            seed: 7,
            ..GeneratorSpec::example(ModelKind::Linear)
        };
        let samples = spec.generate().unwrap();
        let (train, test) = halves(&samples);
        let report = fit_pair(&train, &test, &median_cfg()).unwrap();
        let model = report.selected.expect("verdict accurate");
        assert_eq!(model.kind, ModelKind::Linear);
        assert!(
            (model.slope - 2.0).abs() <= 0.1,
            "beta {} not within 5%",
            model.slope
        );
        assert!(
            (model.intercept - 1.0).abs() <= 0.1,
            "c {} not within 10%",
            model.intercept
        );
    });
}

#[test]
fn acceptance_03_knee_localization() {
    criterion(3, "knee localization", || {
        let cfg = PipelineConfig::default_for_pair(MetricKind::MaxLinkUtilization, &latency_kind());
        assert_eq!(cfg.n_buckets, 20);
        assert_eq!(cfg.curvature_threshold, 0.5);
        let mut hits = 0;
        for seed in 0..20 {
            let samples = knee_bend_samples(6_000, seed, 0.85, 400.0, 0.03);
            let report = fit_pair(&samples, &samples, &cfg).unwrap();
            let Some(knee) = report.knee else { continue };
            if (knee.knee_x - 0.85).abs() <= 0.05 {
                hits += 1;
            }
            // The regression subset must stop at least one bucket (0.05 in
            // x) before the detected knee.
            let threshold = report.knee_threshold.expect("knee implies threshold");
            let max_fit_x = samples
                .iter()
                .map(|s| s.nlm_value)
                .filter(|&x| x < threshold)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(
                max_fit_x < knee.knee_x - 0.05,
                "seed {seed}: subset reaches {max_fit_x} with knee at {}",
                knee.knee_x
            );
        }
        assert!(hits >= 19, "only {hits} of 20 seeds localized the knee");
    });
}

#[test]
fn acceptance_04_analytic_knee_case() {
    criterion(4, "analytic knee case", || {
        let points: Vec<(f64, f64)> = (0..=20)
            .map(|i| {
                let x = i as f64 / 20.0;
                (x, x * x)
            })
            .collect();
        let env = EnvelopeCurve::new(points, KneeDirection::ConvexIncreasing, 0.05).unwrap();
        let knee = detect_knee(&env, 0.2)
            .unwrap()
            .expect("parabola has a knee");
        assert!((knee.knee_x - 0.5).abs() <= 0.025, "knee_x {}", knee.knee_x);
        assert!(
            (knee.curvature - 0.25).abs() <= 0.01,
            "curvature {}",
            knee.curvature
        );
        assert!(
            detect_knee(&env, 0.3).unwrap().is_none(),
            "0.25 peak must not clear 0.3"
        );
    });
}

#[test]
fn acceptance_05_loss_fixtures() {
    criterion(5, "loss fixtures", || {
        assert!((amse(&[2.0, 4.0], &[1.0, 5.0], 0.5).unwrap() - 2.0).abs() <= 1e-9);
        assert!((amse(&[3.0], &[2.0], 0.7).unwrap() - 1.4).abs() <= 1e-9);
        assert!((rarmse(&[110.0], &[100.0], 0.5).unwrap() - 0.1).abs() <= 1e-9);
        assert!(matches!(
            rarmse(&[1.0], &[0.0], 0.5),
            Err(Error::DivisionByZero { .. })
        ));
    });
}

/// Midpoint-convention quantile over raw values, written independently of
/// the sketch: value i of n sits at cumulative position i + 0.5.
fn sorted_oracle_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len() as f64;
    let target = q * n;
    if target <= 0.5 {
        return sorted[0];
    }
    if target >= n - 0.5 {
        return sorted[sorted.len() - 1];
    }
    let i = (target - 0.5).floor() as usize;
    let pos = i as f64 + 0.5;
    sorted[i] + (target - pos) * (sorted[i + 1] - sorted[i])
}

#[test]
fn acceptance_06_sketch_accuracy() {
    criterion(6, "sketch accuracy", || {
        let mut rng = SplitMix64::new(101);
        let values: Vec<f64> = (0..100_000).map(|_| rng.next_range(0.0, 1.0)).collect();
        let mut sketch = QuantileSketch::new(100.0).unwrap();
        for &v in &values {
            sketch.insert(v).unwrap();
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        for q in [0.5, 0.95, 0.99] {
            let estimate = sketch.quantile(q).unwrap();
            let rank = sorted.partition_point(|&v| v <= estimate) as f64;
            let rank_error = (rank / n - q).abs();
            assert!(rank_error <= 0.005, "q={q}: rank error {rank_error}");
        }

        // Small inputs are represented without any merging, so every
        // quantile must equal the sorted-order oracle exactly.
        for m in [1usize, 2, 17, 100] {
            let mut rng = SplitMix64::new(m as u64 + 7);
            let vals: Vec<f64> = (0..m).map(|_| rng.next_range(0.0, 1.0)).collect();
            let mut small = QuantileSketch::new(100.0).unwrap();
            for &v in &vals {
                small.insert(v).unwrap();
            }
            let mut vs = vals.clone();
            vs.sort_by(f64::total_cmp);
            for i in 0..=40 {
                let q = i as f64 / 40.0;
                assert_eq!(
                    small.quantile(q).unwrap(),
                    sorted_oracle_quantile(&vs, q),
                    "n={m} q={q}"
                );
            }
        }
    });
}

#[test]
fn acceptance_07_asymmetry_monotonicity() {
    criterion(7, "asymmetry monotonicity", || {
        let spec = GeneratorSpec {
            sigma: 0.3,
            n: 4_000,
            seed: 23,
            ..GeneratorSpec::example(ModelKind::Queueing)
        };
        let samples = spec.generate().unwrap();
        let (train, test) = halves(&samples);
        let base = PipelineConfig::default();
        let mut last: Option<f64> = None;
        for alpha in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let cfg = PipelineConfig { alpha, ..base };
            let report = fit_pair(&train, &test, &cfg).unwrap();
            let model = report
                .selected
                .as_ref()
                .or_else(|| best_scored(&report.candidates))
                .expect("a scored candidate");
            let frac =
                overprediction_fraction(model, &report.train_buckets).expect("evaluable buckets");
            if let Some(prev) = last {
                assert!(
                    frac <= prev + 1e-12,
                    "alpha {alpha}: overprediction fraction rose from {prev} to {frac}"
                );
            }
            last = Some(frac);
        }
    });
}

#[test]
fn acceptance_08_coverage() {
    criterion(8, "coverage", || {
        // Kneeless fit: the whole test range is in domain.
        let spec = GeneratorSpec {
            n: 2_000,
            seed: 3,
            ..GeneratorSpec::example(ModelKind::Linear)
        };
        let samples = spec.generate().unwrap();
        let (train, test) = halves(&samples);
        let report = fit_pair(&train, &test, &median_cfg()).unwrap();
        assert!(report.knee.is_none(), "linear data must not show a knee");
        assert_eq!(report.coverage, 1.0);

        // Constructed test set with exactly 10% of samples above the knee
        // threshold.
        let train = knee_bend_samples(6_000, 3, 0.85, 400.0, 0.02);
        let cfg = PipelineConfig::default();
        let first = fit_pair(&train, &train, &cfg).unwrap();
        let threshold = first.knee_threshold.expect("bend data has a knee");
        let template = &train[0];
        let constructed: Vec<JoinedSample> = (0..1_000)
            .map(|i| {
                let x = if i < 900 {
                    // Strictly below the threshold.
                    threshold * 0.999 * (i as f64 + 1.0) / 900.0
                } else {
                    // Strictly above it, still a valid utilization.
                    threshold + (1.0 - threshold) * ((i - 900) as f64 + 1.0) / 101.0
                };
                let mut base = 2.0 * x + 1.0;
                if x > 0.85 {
                    base += 400.0 * (x - 0.85) * (x - 0.85);
                }
                JoinedSample {
                    window_start: i as i64 * 300,
                    nlm_value: x,
                    afm_value: base,
                    ..template.clone()
                }
            })
            .collect();
        let second = fit_pair(&train, &constructed, &cfg).unwrap();
        assert_eq!(second.knee_threshold, Some(threshold));
        assert!(
            (second.coverage - 0.9).abs() <= 1e-12,
            "coverage {}",
            second.coverage
        );
    });
}

#[test]
fn acceptance_09_defaults_audit() {
    criterion(9, "defaults audit", || {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.curvature_threshold, 0.5);
        assert_eq!(cfg.error_threshold, 0.15);
        assert_eq!(cfg.target_quantile, 0.95);
        for kind in [
            MetricKind::MaxLinkUtilization,
            MetricKind::MaxAdjacencyUtilization,
        ] {
            assert_eq!(PipelineConfig::default_for(kind).n_buckets, 20, "{kind}");
        }
        for kind in [
            MetricKind::AvgLinkUtilization,
            MetricKind::AvgAdjacencyUtilization,
        ] {
            assert_eq!(PipelineConfig::default_for(kind).n_buckets, 100, "{kind}");
        }
    });
}

#[test]
fn acceptance_10_stability_harness() {
    criterion(10, "stability harness", || {
        let spec = GeneratorSpec {
            kind: ModelKind::Queueing,
            sigma: 0.05,
            n: (10 * WEEK_S / 300) as usize,
            seed: 31,
            ..GeneratorSpec::example(ModelKind::Queueing)
        };
        let samples = spec.generate().unwrap();
        let cfg = PipelineConfig::default_for_pair(spec.nlm_kind, &spec.afm_kind);
        let windows = stability_sweep(&samples, &cfg, 4 * WEEK_S, 2 * WEEK_S, 2 * WEEK_S).unwrap();
        assert_eq!(windows.len(), 3, "10 weeks at 4w train / 2w test / 2w step");
        let kinds: Vec<ModelKind> = windows
            .iter()
            .map(|w| {
                w.report
                    .selected
                    .as_ref()
                    .expect("stationary data fits")
                    .kind
            })
            .collect();
        assert!(
            kinds.windows(2).all(|pair| pair[0] == pair[1]),
            "selected kinds differ across windows: {kinds:?}"
        );
    });
}

#[test]
fn acceptance_11_determinism_and_round_trip() {
    criterion(11, "determinism and round trip", || {
        let spec = GeneratorSpec {
            n: 2_000,
            sigma: 0.05,
            seed: 47,
            ..GeneratorSpec::example(ModelKind::Queueing)
        };
        let samples = spec.generate().unwrap();

        // Emit as raw telemetry files, re-ingest, and rejoin: the samples
        // must come back bit for bit.
        let mut nlm_bytes = Vec::new();
        let mut afm_bytes = Vec::new();
        let options = EmitOptions {
            format: Format::Csv,
            afm_mode: AfmMode::Scalar,
        };
        emit_files(&samples, &mut nlm_bytes, &mut afm_bytes, &options).unwrap();
        let (ports, port_report) = parse_port_records(nlm_bytes.as_slice(), Format::Csv).unwrap();
        let (afm, afm_report) = parse_afm_records(afm_bytes.as_slice(), Format::Csv).unwrap();
        assert!(port_report.is_clean() && afm_report.is_clean());
        let (points, _) =
            reaggregate_nlm(&ports, 300, spec.qos, &spec.scope, &[spec.nlm_kind]).unwrap();
        let (joined, _) = join_series(&points, &afm, spec.nlm_kind, spec.afm_kind).unwrap();
        assert_eq!(joined, samples);

        // Two full independent runs serialize to identical bytes.
        let run = || {
            let samples = spec.generate().unwrap();
            let (train, test) = halves(&samples);
            let report = fit_pair(&train, &test, &PipelineConfig::default()).unwrap();
            serde_json::to_string(&report).unwrap()
        };
        assert_eq!(run(), run());
    });
}
