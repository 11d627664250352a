//! End-to-end model fitting: envelope, knee, candidate fits, selection,
//! and the stability and sensitivity sweeps built on top.
//!
//! `fit_pair` is the core operation. Given joined train and test samples of
//! one metric pair it:
//!
//! 1. builds the train envelope and looks for a knee;
//! 2. cuts the domain one bucket width below any knee (the knee bucket
//!    itself is already contaminated by the regime change);
//! 3. buckets the pre-knee training samples into conditional quantile
//!    points and fits linear and queueing candidates under asymmetric loss;
//! 4. scores candidates on pre-knee test bucket points by relative
//!    asymmetric RMS error and selects the lowest;
//! 5. issues a verdict: `Accurate` when the best score clears the error
//!    threshold, `NoClearRelationship` when candidates were scored but none
//!    cleared it, `InsufficientData` when nothing could be fitted or scored.
//!
//! Data-quality failures (too few populated buckets, empty pre-knee domain)
//! become verdicts, not errors; errors are reserved for caller mistakes
//! such as empty inputs, mixed metric identities, or invalid configuration.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knee::{self, KneeResult};
use crate::model::{
    AfmKind, FittedModel, JoinedSample, MetricKind, ModelKind, PipelineConfig, QosClass, Scope,
    TailSide,
};
use crate::par;
use crate::regression::{self, BucketPoint};

/// Outcome of fitting one metric pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// A candidate cleared the error threshold; its model is selected.
    Accurate,
    /// Candidates were fitted and scored, but none predicted well enough.
    NoClearRelationship,
    /// The data could not support fitting and scoring at all.
    InsufficientData,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Accurate => "accurate",
            Verdict::NoClearRelationship => "no_clear_relationship",
            Verdict::InsufficientData => "insufficient_data",
        })
    }
}

/// Full record of one `fit_pair` run: inputs, intermediates, and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModelReport {
    pub fabric: String,
    pub scope: Scope,
    pub qos: QosClass,
    pub nlm_kind: MetricKind,
    pub afm_kind: AfmKind,
    pub config: PipelineConfig,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Envelope points over the full training range; empty when too sparse
    /// to build.
    pub envelope: Vec<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub knee: Option<KneeResult>,
    /// Upper edge of the modeling domain: knee x minus one bucket width.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub knee_threshold: Option<f64>,
    /// Pre-knee train bucket points the candidates were fitted on.
    pub train_buckets: Vec<BucketPoint>,
    /// Pre-knee test bucket points the candidates were scored on.
    pub test_buckets: Vec<BucketPoint>,
    pub candidates: Vec<FittedModel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selected: Option<FittedModel>,
    pub verdict: Verdict,
    /// Fraction of test samples inside the modeling domain (1.0 without a
    /// knee).
    pub coverage: f64,
}

fn check_identity(samples: &[JoinedSample], first: &JoinedSample) -> Result<()> {
    for s in samples {
        if s.fabric != first.fabric
            || s.scope != first.scope
            || s.qos != first.qos
            || s.nlm_kind != first.nlm_kind
            || s.afm_kind != first.afm_kind
        {
            return Err(Error::MixedIdentities {
                detail: format!(
                    "expected {}/{}/{}/{}/{}, found {}/{}/{}/{}/{}",
                    first.fabric,
                    first.scope,
                    first.qos,
                    first.nlm_kind,
                    first.afm_kind,
                    s.fabric,
                    s.scope,
                    s.qos,
                    s.nlm_kind,
                    s.afm_kind
                ),
            });
        }
    }
    Ok(())
}

/// The scored candidate with the lowest test error; ties keep the earlier
/// (simpler) candidate.
pub fn best_scored(candidates: &[FittedModel]) -> Option<&FittedModel> {
    let mut best: Option<&FittedModel> = None;
    for cand in candidates {
        let Some(score) = cand.test_rarmse else {
            continue;
        };
        if best.is_none_or(|b| score < b.test_rarmse.expect("scored")) {
            best = Some(cand);
        }
    }
    best
}

/// Fraction of bucket points the model predicts strictly above; exact hits
/// count as neither side. `None` when nothing could be evaluated.
pub fn overprediction_fraction(model: &FittedModel, buckets: &[BucketPoint]) -> Option<f64> {
    if buckets.is_empty() {
        return None;
    }
    let mut over = 0usize;
    for b in buckets {
        let pred = regression::predict(model, b.x).ok()?;
        if pred.value > b.y {
            over += 1;
        }
    }
    Some(over as f64 / buckets.len() as f64)
}

/// Fits and evaluates one metric pair. See the module docs for the stages.
pub fn fit_pair(
    train: &[JoinedSample],
    test: &[JoinedSample],
    cfg: &PipelineConfig,
) -> Result<PairModelReport> {
    cfg.validate()?;
    let first = train.first().ok_or(Error::Empty {
        what: "training samples",
    })?;
    if test.is_empty() {
        return Err(Error::Empty {
            what: "test samples",
        });
    }
    check_identity(train, first)?;
    check_identity(test, first)?;

    let train_xy: Vec<(f64, f64)> = train.iter().map(|s| (s.nlm_value, s.afm_value)).collect();
    let test_xy: Vec<(f64, f64)> = test.iter().map(|s| (s.nlm_value, s.afm_value)).collect();

    // Envelope and knee over the full training range. A failed envelope
    // (too sparse) is not fatal; fitting proceeds kneeless.
    let env_quantile = match cfg.tail_side {
        TailSide::Upper => cfg.target_quantile,
        TailSide::Lower => 1.0 - cfg.target_quantile,
    };
    let (envelope, kne, knee_threshold) = match knee::build_envelope(
        &train_xy,
        cfg.n_buckets,
        env_quantile,
        cfg.min_bucket_samples,
        cfg.knee_direction,
    ) {
        Ok(curve) => {
            let detected = knee::detect_knee(&curve, cfg.curvature_threshold)?;
            let threshold = detected.map(|k| k.knee_x - curve.bucket_width());
            (curve.points().to_vec(), detected, threshold)
        }
        Err(_) => (Vec::new(), None, None),
    };

    // The modeling domain stops one bucket width short of the knee; the
    // knee bucket itself already mixes both regimes.
    let train_fit: Vec<(f64, f64)> = match knee_threshold {
        Some(t) => train_xy.iter().copied().filter(|&(x, _)| x < t).collect(),
        None => train_xy.clone(),
    };
    let test_fit: Vec<(f64, f64)> = match knee_threshold {
        Some(t) => test_xy.iter().copied().filter(|&(x, _)| x <= t).collect(),
        None => test_xy.clone(),
    };
    let coverage = match knee_threshold {
        Some(t) => test_xy.iter().filter(|&&(x, _)| x <= t).count() as f64 / test_xy.len() as f64,
        None => 1.0,
    };

    let mut train_buckets = Vec::new();
    let mut test_buckets = Vec::new();
    let mut candidates: Vec<FittedModel> = Vec::new();
    let mut selected = None;
    let mut verdict = Verdict::InsufficientData;

    if let Ok(buckets) = regression::bucketize(
        &train_fit,
        cfg.n_buckets,
        cfg.target_quantile,
        cfg.tail_side,
        cfg.min_bucket_samples,
    ) {
        for kind in [ModelKind::Linear, ModelKind::Queueing] {
            let fit = match kind {
                ModelKind::Linear => regression::fit_linear(&buckets, cfg.alpha),
                ModelKind::Queueing => regression::fit_queueing(&buckets, cfg.alpha),
            };
            // An individual family can be unfittable (saturated domain,
            // degenerate x) without dooming the pair.
            if let Ok(line) = fit {
                candidates.push(FittedModel {
                    kind,
                    slope: line.slope,
                    intercept: line.intercept,
                    tau: cfg.target_quantile,
                    alpha: cfg.alpha,
                    knee_threshold,
                    train_amse: line.train_amse,
                    test_rarmse: None,
                    coverage: None,
                });
            }
        }
        train_buckets = buckets;

        if let Ok(buckets) = regression::bucketize(
            &test_fit,
            cfg.n_buckets,
            cfg.target_quantile,
            cfg.tail_side,
            cfg.min_bucket_samples,
        ) {
            let truths: Vec<f64> = buckets.iter().map(|b| b.y).collect();
            for cand in &mut candidates {
                let preds: Option<Vec<f64>> = buckets
                    .iter()
                    .map(|b| regression::predict(cand, b.x).ok().map(|p| p.value))
                    .collect();
                cand.test_rarmse =
                    preds.and_then(|p| regression::rarmse(&p, &truths, cfg.alpha).ok());
            }
            test_buckets = buckets;
        }

        if let Some(best) = best_scored(&candidates) {
            if best.test_rarmse.expect("scored") <= cfg.error_threshold {
                let mut chosen = best.clone();
                chosen.coverage = Some(coverage);
                selected = Some(chosen);
                verdict = Verdict::Accurate;
            } else {
                verdict = Verdict::NoClearRelationship;
            }
        }
    }

    Ok(PairModelReport {
        fabric: first.fabric.clone(),
        scope: first.scope.clone(),
        qos: first.qos,
        nlm_kind: first.nlm_kind,
        afm_kind: first.afm_kind,
        config: *cfg,
        train_samples: train.len(),
        test_samples: test.len(),
        envelope,
        knee: kne,
        knee_threshold,
        train_buckets,
        test_buckets,
        candidates,
        selected,
        verdict,
        coverage,
    })
}

/// Splits samples at an epoch boundary: windows starting before it train,
/// the rest test.
pub fn split_at(samples: &[JoinedSample], epoch: i64) -> (Vec<JoinedSample>, Vec<JoinedSample>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        if s.window_start < epoch {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    (train, test)
}

/// One rolling-origin evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window_index: usize,
    pub train_start: i64,
    pub train_end: i64,
    pub test_start: i64,
    pub test_end: i64,
    pub report: PairModelReport,
}

/// Rolling-origin stability evaluation.
///
/// Starting at the earliest sample, each window trains on `train_len_s`
/// seconds and tests on the following `test_len_s`, then the origin moves
/// forward `step_s`. Windows run while they fit entirely inside the data
/// span; each is fitted independently (and in parallel when enabled).
pub fn stability_sweep(
    samples: &[JoinedSample],
    cfg: &PipelineConfig,
    train_len_s: i64,
    test_len_s: i64,
    step_s: i64,
) -> Result<Vec<WindowReport>> {
    for (name, v) in [
        ("train_len_s", train_len_s),
        ("test_len_s", test_len_s),
        ("step_s", step_s),
    ] {
        if v <= 0 {
            return Err(Error::InvalidSpec(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    if samples.is_empty() {
        return Err(Error::Empty { what: "samples" });
    }
    let lo = samples
        .iter()
        .map(|s| s.window_start)
        .min()
        .expect("non-empty");
    let hi = samples
        .iter()
        .map(|s| s.window_start + s.window_len)
        .max()
        .expect("non-empty");
    let span = hi - lo;
    let needed = train_len_s + test_len_s;
    if span < needed {
        return Err(Error::SpanTooShort {
            span_s: span,
            needed_s: needed,
        });
    }
    let mut offsets = Vec::new();
    let mut off = 0;
    while off + needed <= span {
        offsets.push(off);
        off += step_s;
    }
    let mut windows = par::map_slice(&offsets, |&off| -> Result<WindowReport> {
        let train_start = lo + off;
        let test_start = train_start + train_len_s;
        let test_end = test_start + test_len_s;
        let train: Vec<JoinedSample> = samples
            .iter()
            .filter(|s| s.window_start >= train_start && s.window_start < test_start)
            .cloned()
            .collect();
        let test: Vec<JoinedSample> = samples
            .iter()
            .filter(|s| s.window_start >= test_start && s.window_start < test_end)
            .cloned()
            .collect();
        Ok(WindowReport {
            window_index: 0,
            train_start,
            train_end: test_start,
            test_start,
            test_end,
            report: fit_pair(&train, &test, cfg)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    for (i, w) in windows.iter_mut().enumerate() {
        w.window_index = i;
    }
    Ok(windows)
}

/// Parameter grids for [`sensitivity_sweep`]. Empty `error_thresholds`
/// means "use the base configuration's threshold".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrids {
    pub alphas: Vec<f64>,
    pub curvature_thresholds: Vec<f64>,
    pub error_thresholds: Vec<f64>,
}

impl Default for SweepGrids {
    fn default() -> Self {
        Self {
            alphas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            curvature_thresholds: vec![0.05, 0.1, 0.3, 0.5, 0.7, 0.8],
            error_thresholds: Vec::new(),
        }
    }
}

/// One sensitivity-sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub curvature_threshold: f64,
    pub error_threshold: f64,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selected_kind: Option<ModelKind>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_rarmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub knee_x: Option<f64>,
    pub coverage: f64,
    /// Fraction of train bucket points the best candidate overpredicts.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overprediction_fraction: Option<f64>,
}

/// Refits the pair across the (alpha, curvature) grid and re-judges each
/// fit against every error threshold.
///
/// Error thresholds only gate the verdict, so they reuse the fitted cell
/// instead of refitting. Cells are independent and run in parallel when
/// enabled; row order is the deterministic grid order (alpha-major, then
/// curvature, then threshold).
pub fn sensitivity_sweep(
    train: &[JoinedSample],
    test: &[JoinedSample],
    base_cfg: &PipelineConfig,
    grids: &SweepGrids,
) -> Result<Vec<SweepRow>> {
    base_cfg.validate()?;
    if grids.alphas.is_empty() || grids.curvature_thresholds.is_empty() {
        return Err(Error::Empty {
            what: "sweep grids",
        });
    }
    let thresholds = if grids.error_thresholds.is_empty() {
        vec![base_cfg.error_threshold]
    } else {
        grids.error_thresholds.clone()
    };
    let mut cells = Vec::with_capacity(grids.alphas.len() * grids.curvature_thresholds.len());
    for &alpha in &grids.alphas {
        for &curvature in &grids.curvature_thresholds {
            cells.push((alpha, curvature));
        }
    }
    let fitted = par::map_slice(&cells, |&(alpha, curvature)| -> Result<_> {
        let cfg = PipelineConfig {
            alpha,
            curvature_threshold: curvature,
            ..*base_cfg
        };
        let report = fit_pair(train, test, &cfg)?;
        let over = best_scored(&report.candidates)
            .and_then(|m| overprediction_fraction(m, &report.train_buckets));
        Ok((alpha, curvature, report, over))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(fitted.len() * thresholds.len());
    for (alpha, curvature, report, over) in &fitted {
        for &threshold in &thresholds {
            let best = best_scored(&report.candidates);
            let (verdict, selected_kind) = match best.and_then(|b| b.test_rarmse) {
                None => (Verdict::InsufficientData, None),
                Some(score) if score <= threshold => (Verdict::Accurate, best.map(|b| b.kind)),
                Some(_) => (Verdict::NoClearRelationship, None),
            };
            rows.push(SweepRow {
                alpha: *alpha,
                curvature_threshold: *curvature,
                error_threshold: threshold,
                verdict,
                selected_kind,
                test_rarmse: best.and_then(|b| b.test_rarmse),
                knee_x: report.knee.map(|k| k.knee_x),
                coverage: report.coverage,
                overprediction_fraction: *over,
            });
        }
    }
    Ok(rows)
}

/// Writes a plot-ready CSV of the report: one row per envelope point with
/// the model's prediction alongside. Falls back to train bucket points when
/// the envelope could not be built.
pub fn write_plot_csv<W: Write>(report: &PairModelReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "bucket_x",
        "observed_quantile",
        "predicted_quantile",
        "in_domain",
    ])
    .map_err(std::io::Error::other)?;
    let model = report
        .selected
        .as_ref()
        .or_else(|| best_scored(&report.candidates));
    let rows: Vec<(f64, f64)> = if report.envelope.is_empty() {
        report.train_buckets.iter().map(|b| (b.x, b.y)).collect()
    } else {
        report.envelope.clone()
    };
    for (x, y) in rows {
        let (predicted, in_domain) = match model.and_then(|m| regression::predict(m, x).ok()) {
            Some(p) => (
                format!("{}", p.value),
                if p.in_domain { "1" } else { "0" }.into(),
            ),
            None => (String::new(), String::new()),
        };
        w.write_record([format!("{x}"), format!("{y}"), predicted, in_domain])
            .map_err(std::io::Error::other)?;
    }
    w.flush()?;
    Ok(())
}
