//! Conditional-quantile regression under an asymmetric squared loss.
//!
//! Raw joined samples are first discretized into equal-width x buckets; each
//! bucket contributes one `(bucket center, conditional tau-quantile)` point.
//! Models are then fit to those points by minimizing AMSE, a squared loss
//! that normalizes over- and under-predictions separately:
//!
//! `amse = 2 * (alpha * mean(over^2) + (1 - alpha) * mean(under^2))`
//!
//! where `over` are positive residuals, `under` negative residuals, exact
//! hits count in neither side, and an empty side contributes zero. `alpha`
//! above 0.5 penalizes overprediction harder. rARMSE is the square root of
//! the same form computed on relative residuals `(pred - truth) / truth`,
//! which is undefined when any truth is zero.
//!
//! Two model families are supported: a plain line, and a queueing transform
//! `y = slope * x / (1 - x) + intercept` that linearizes M/D/1-style latency
//! growth. The transform is only trusted below [`QUEUEING_X_LIMIT`].

use crate::error::{Error, Result};
use crate::model::{FittedModel, ModelKind, TailSide};
use crate::stats;

/// Utilizations at or above this are too close to saturation for the
/// queueing transform to be meaningful at fit time.
pub const QUEUEING_X_LIMIT: f64 = 0.995;

/// One discretized regression point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BucketPoint {
    /// Bucket center on the NLM axis.
    pub x: f64,
    /// Conditional quantile of the AFM values inside the bucket.
    pub y: f64,
    /// Samples the bucket held.
    pub count: usize,
}

/// Discretizes `(x, y)` samples into `n_buckets` equal-width x buckets over
/// `[min x, max x]`, summarizing each bucket by its conditional quantile.
///
/// `tail_side` picks which conditional tail `tau` refers to: `Upper` fits
/// the `tau` quantile, `Lower` the `1 - tau` quantile. Buckets with fewer
/// than `min_bucket_samples` samples are dropped. At least two buckets must
/// survive.
pub fn bucketize(
    samples: &[(f64, f64)],
    n_buckets: usize,
    tau: f64,
    tail_side: TailSide,
    min_bucket_samples: usize,
) -> Result<Vec<BucketPoint>> {
    if samples.is_empty() {
        return Err(Error::Empty { what: "samples" });
    }
    if n_buckets < 2 {
        return Err(Error::TooFewBuckets {
            context: "bucketize",
            needed: 2,
            got: n_buckets,
        });
    }
    if !tau.is_finite() || tau <= 0.0 || tau >= 1.0 {
        return Err(Error::FractionOutOfRange {
            field: "tau",
            lo: 0.0,
            hi: 1.0,
            value: tau,
        });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(x, y) in samples {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                field: "sample x",
                value: x,
            });
        }
        if !y.is_finite() {
            return Err(Error::NonFinite {
                field: "sample y",
                value: y,
            });
        }
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let width = (hi - lo) / n_buckets as f64;
    if width <= 0.0 {
        return Err(Error::TooFewBuckets {
            context: "bucketize: zero x spread puts all samples in one bucket",
            needed: 2,
            got: 1,
        });
    }
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n_buckets];
    for &(x, y) in samples {
        let idx = (((x - lo) / width) as usize).min(n_buckets - 1);
        buckets[idx].push(y);
    }
    let q = match tail_side {
        TailSide::Upper => tau,
        TailSide::Lower => 1.0 - tau,
    };
    let points: Vec<BucketPoint> = buckets
        .into_iter()
        .enumerate()
        .filter(|(_, ys)| ys.len() >= min_bucket_samples.max(1))
        .map(|(i, ys)| BucketPoint {
            x: lo + (i as f64 + 0.5) * width,
            y: stats::quantile_type7(&ys, q),
            count: ys.len(),
        })
        .collect();
    if points.len() < 2 {
        return Err(Error::TooFewBuckets {
            context: "bucketize: too few populated buckets",
            needed: 2,
            got: points.len(),
        });
    }
    Ok(points)
}

fn check_loss_inputs(predictions: &[f64], truths: &[f64], alpha: f64) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty {
            what: "loss inputs",
        });
    }
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::FractionOutOfRange {
            field: "alpha",
            lo: 0.0,
            hi: 1.0,
            value: alpha,
        });
    }
    Ok(())
}

/// Asymmetric mean squared error over paired predictions and truths.
pub fn amse(predictions: &[f64], truths: &[f64], alpha: f64) -> Result<f64> {
    check_loss_inputs(predictions, truths, alpha)?;
    let mut over_sum = 0.0;
    let mut over_n = 0usize;
    let mut under_sum = 0.0;
    let mut under_n = 0usize;
    for (&p, &t) in predictions.iter().zip(truths) {
        let e = p - t;
        if e > 0.0 {
            over_sum += e * e;
            over_n += 1;
        } else if e < 0.0 {
            under_sum += e * e;
            under_n += 1;
        }
    }
    let over_mean = if over_n > 0 {
        over_sum / over_n as f64
    } else {
        0.0
    };
    let under_mean = if under_n > 0 {
        under_sum / under_n as f64
    } else {
        0.0
    };
    Ok(2.0 * (alpha * over_mean + (1.0 - alpha) * under_mean))
}

/// Relative asymmetric root error: the square root of the AMSE form applied
/// to relative residuals `(pred - truth) / truth`.
pub fn rarmse(predictions: &[f64], truths: &[f64], alpha: f64) -> Result<f64> {
    check_loss_inputs(predictions, truths, alpha)?;
    let mut over_sum = 0.0;
    let mut over_n = 0usize;
    let mut under_sum = 0.0;
    let mut under_n = 0usize;
    for (i, (&p, &t)) in predictions.iter().zip(truths).enumerate() {
        if t == 0.0 {
            return Err(Error::DivisionByZero { index: i });
        }
        let e = p - t;
        let rel = e / t;
        if e > 0.0 {
            over_sum += rel * rel;
            over_n += 1;
        } else if e < 0.0 {
            under_sum += rel * rel;
            under_n += 1;
        }
    }
    let over_mean = if over_n > 0 {
        over_sum / over_n as f64
    } else {
        0.0
    };
    let under_mean = if under_n > 0 {
        under_sum / under_n as f64
    } else {
        0.0
    };
    Ok((2.0 * (alpha * over_mean + (1.0 - alpha) * under_mean)).sqrt())
}

/// A fitted line with its training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub train_amse: f64,
}

fn ols(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mean_x) * (y - mean_y);
        var += (x - mean_x) * (x - mean_x);
    }
    if var == 0.0 {
        return Err(Error::DegenerateInput {
            what: "regression needs at least two distinct x values",
        });
    }
    let slope = cov / var;
    Ok((slope, mean_y - slope * mean_x))
}

fn amse_of_line(xs: &[f64], ys: &[f64], alpha: f64, slope: f64, intercept: f64) -> f64 {
    let preds: Vec<f64> = xs.iter().map(|&x| slope * x + intercept).collect();
    amse(&preds, ys, alpha).expect("validated inputs")
}

/// Minimizes AMSE over (slope, intercept) by deterministic coordinate
/// descent seeded at the least-squares solution.
///
/// Each sweep walks one coordinate at a time greedily in the improving
/// direction; sweeps that fail to improve halve both steps. Stops once an
/// improving sweep gains less than 1e-10 relative, steps underflow, or 500
/// sweeps pass. For symmetric loss on exactly-linear points the seed is
/// already optimal and survives unchanged.
fn minimize_amse(xs: &[f64], ys: &[f64], alpha: f64, seed: (f64, f64)) -> LineFit {
    let (mut slope, mut intercept) = seed;
    let mut step_slope = slope.abs() * 0.1 + 1e-6;
    let mut step_intercept = intercept.abs() * 0.1 + 1e-6;
    let mut best = amse_of_line(xs, ys, alpha, slope, intercept);

    for _ in 0..500 {
        let before = best;
        for coord in 0..2 {
            loop {
                let step = if coord == 0 {
                    step_slope
                } else {
                    step_intercept
                };
                let (cand_up, cand_dn) = if coord == 0 {
                    ((slope + step, intercept), (slope - step, intercept))
                } else {
                    ((slope, intercept + step), (slope, intercept - step))
                };
                let up = amse_of_line(xs, ys, alpha, cand_up.0, cand_up.1);
                let dn = amse_of_line(xs, ys, alpha, cand_dn.0, cand_dn.1);
                if up < best && up <= dn {
                    (slope, intercept) = cand_up;
                    best = up;
                } else if dn < best {
                    (slope, intercept) = cand_dn;
                    best = dn;
                } else {
                    break;
                }
            }
        }
        if best < before {
            if before - best < 1e-10 * before.abs().max(1e-300) {
                break;
            }
        } else {
            step_slope *= 0.5;
            step_intercept *= 0.5;
            let scale = slope.abs().max(intercept.abs()).max(1.0);
            if step_slope.max(step_intercept) < 1e-16 * scale {
                break;
            }
        }
    }
    LineFit {
        slope,
        intercept,
        train_amse: best,
    }
}

/// Fits `y = slope * x + intercept` to bucket points under AMSE.
pub fn fit_linear(points: &[BucketPoint], alpha: f64) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::TooFewBuckets {
            context: "fit_linear",
            needed: 2,
            got: points.len(),
        });
    }
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::FractionOutOfRange {
            field: "alpha",
            lo: 0.0,
            hi: 1.0,
            value: alpha,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let seed = ols(&xs, &ys)?;
    Ok(minimize_amse(&xs, &ys, alpha, seed))
}

/// Fits `y = slope * x / (1 - x) + intercept` by linearizing through the
/// queueing transform `x -> x / (1 - x)` and fitting a line to that.
///
/// Every point must satisfy `x < QUEUEING_X_LIMIT`; the caller is expected
/// to have cut the domain at the knee before fitting.
pub fn fit_queueing(points: &[BucketPoint], alpha: f64) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::TooFewBuckets {
            context: "fit_queueing",
            needed: 2,
            got: points.len(),
        });
    }
    for p in points {
        if p.x >= QUEUEING_X_LIMIT {
            return Err(Error::SaturatedUtilization {
                value: p.x,
                limit: QUEUEING_X_LIMIT,
            });
        }
    }
    let transformed: Vec<BucketPoint> = points
        .iter()
        .map(|p| BucketPoint {
            x: p.x / (1.0 - p.x),
            ..*p
        })
        .collect();
    fit_linear(&transformed, alpha)
}

/// A point prediction plus whether it fell inside the model's validity
/// domain (at or below the knee threshold, when one exists).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub in_domain: bool,
}

/// Evaluates a fitted model at `x`.
///
/// Out-of-domain inputs still produce a value but come back flagged; a
/// queueing model at `x >= 1` has no finite value at all and errors.
pub fn predict(model: &FittedModel, x: f64) -> Result<Prediction> {
    if !x.is_finite() {
        return Err(Error::NonFinite {
            field: "x",
            value: x,
        });
    }
    let value = match model.kind {
        ModelKind::Linear => model.slope * x + model.intercept,
        ModelKind::Queueing => {
            if x >= 1.0 {
                return Err(Error::SaturatedUtilization {
                    value: x,
                    limit: 1.0,
                });
            }
            model.slope * x / (1.0 - x) + model.intercept
        }
    };
    let in_domain = model.knee_threshold.is_none_or(|t| x <= t);
    Ok(Prediction { value, in_domain })
}
