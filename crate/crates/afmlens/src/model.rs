//! Shared vocabulary for the analysis pipeline.
//!
//! Contracts enforced here and relied on everywhere else:
//! * timestamps are integer epoch seconds; a window covers
//!   `[window_start, window_start + window_len)`;
//! * latencies are in seconds, delivery rates in packets per second,
//!   utilizations dimensionless in `[0, 1]`;
//! * utilization values may exceed 1.0 by at most [`UTILIZATION_ALLOWANCE`]
//!   (counter jitter) and are clamped back to exactly 1.0; anything larger
//!   is rejected as corrupt.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Excess above 1.0 tolerated for utilization values before rejection.
pub const UTILIZATION_ALLOWANCE: f64 = 0.02;

/// Traffic class of an RPC flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QosClass {
    High,
    Medium,
    Low,
}

impl QosClass {
    pub fn as_str(self) -> &'static str {
        match self {
            QosClass::High => "high",
            QosClass::Medium => "medium",
            QosClass::Low => "low",
        }
    }
}

impl fmt::Display for QosClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QosClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(QosClass::High),
            "medium" => Ok(QosClass::Medium),
            "low" => Ok(QosClass::Low),
            other => Err(format!("unknown QoS class {other:?}")),
        }
    }
}

impl Serialize for QosClass {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QosClass {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Aggregation scope of a metric series.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    /// Inter-block traffic across the whole fabric.
    FabricWide,
    /// Traffic internal to one aggregation block.
    Block(String),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::FabricWide => f.write_str("fabric"),
            Scope::Block(b) => write!(f, "block:{b}"),
        }
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("fabric") {
            return Ok(Scope::FabricWide);
        }
        if let Some(block) = s.strip_prefix("block:") {
            if block.is_empty() {
                return Err("block scope needs a non-empty id, e.g. block:ab1".into());
            }
            return Ok(Scope::Block(block.to_string()));
        }
        Err(format!(
            "unknown scope {s:?}; expected `fabric` or `block:<id>`"
        ))
    }
}

impl Serialize for Scope {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Network-level metric families derivable from port counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    /// Outgoing bits of one link divided by its speed.
    LinkUtilization,
    /// Utilization of one block-to-block link aggregate.
    AdjacencyUtilization,
    MaxLinkUtilization,
    AvgLinkUtilization,
    MaxAdjacencyUtilization,
    AvgAdjacencyUtilization,
    /// k-th percentile over per-link utilizations, k in [0, 100].
    PercentileLinkUtilization(u8),
    /// k-th percentile over per-adjacency utilizations.
    PercentileAdjacencyUtilization(u8),
    /// Spread between the 95th and 5th percentile link utilization.
    P5P95DistanceLink,
    /// Spread between the 95th and 5th percentile adjacency utilization.
    P5P95DistanceAdjacency,
    /// Jain's fairness index over per-link utilizations.
    JainFairnessIndex,
}

impl MetricKind {
    /// Whether values of this kind are utilizations subject to the clamp
    /// rule (as opposed to distances or fairness indices).
    pub fn is_utilization(self) -> bool {
        !matches!(
            self,
            MetricKind::P5P95DistanceLink
                | MetricKind::P5P95DistanceAdjacency
                | MetricKind::JainFairnessIndex
        )
    }

    /// Whether this kind aggregates per-adjacency (vs per-link) values.
    pub fn is_adjacency_based(self) -> bool {
        matches!(
            self,
            MetricKind::AdjacencyUtilization
                | MetricKind::MaxAdjacencyUtilization
                | MetricKind::AvgAdjacencyUtilization
                | MetricKind::PercentileAdjacencyUtilization(_)
                | MetricKind::P5P95DistanceAdjacency
        )
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::LinkUtilization => f.write_str("link_utilization"),
            MetricKind::AdjacencyUtilization => f.write_str("adjacency_utilization"),
            MetricKind::MaxLinkUtilization => f.write_str("max_link_utilization"),
            MetricKind::AvgLinkUtilization => f.write_str("avg_link_utilization"),
            MetricKind::MaxAdjacencyUtilization => f.write_str("max_adjacency_utilization"),
            MetricKind::AvgAdjacencyUtilization => f.write_str("avg_adjacency_utilization"),
            MetricKind::PercentileLinkUtilization(k) => write!(f, "p{k}_link_utilization"),
            MetricKind::PercentileAdjacencyUtilization(k) => {
                write!(f, "p{k}_adjacency_utilization")
            }
            MetricKind::P5P95DistanceLink => f.write_str("p5_p95_distance_link"),
            MetricKind::P5P95DistanceAdjacency => f.write_str("p5_p95_distance_adjacency"),
            MetricKind::JainFairnessIndex => f.write_str("jain_fairness_index"),
        }
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let kind = match lower.as_str() {
            "link_utilization" => MetricKind::LinkUtilization,
            "adjacency_utilization" => MetricKind::AdjacencyUtilization,
            "max_link_utilization" | "mlu" => MetricKind::MaxLinkUtilization,
            "avg_link_utilization" | "alu" => MetricKind::AvgLinkUtilization,
            "max_adjacency_utilization" | "mau" => MetricKind::MaxAdjacencyUtilization,
            "avg_adjacency_utilization" | "aau" => MetricKind::AvgAdjacencyUtilization,
            "p5_p95_distance_link" => MetricKind::P5P95DistanceLink,
            "p5_p95_distance_adjacency" => MetricKind::P5P95DistanceAdjacency,
            "jain_fairness_index" | "jain" => MetricKind::JainFairnessIndex,
            _ => {
                let parse_percentile = |body: &str| -> Option<u8> {
                    let k: u8 = body.parse().ok()?;
                    (k <= 100).then_some(k)
                };
                if let Some(rest) = lower.strip_prefix('p') {
                    if let Some(body) = rest.strip_suffix("_link_utilization") {
                        if let Some(k) = parse_percentile(body) {
                            return Ok(MetricKind::PercentileLinkUtilization(k));
                        }
                    }
                    if let Some(body) = rest.strip_suffix("_adjacency_utilization") {
                        if let Some(k) = parse_percentile(body) {
                            return Ok(MetricKind::PercentileAdjacencyUtilization(k));
                        }
                    }
                }
                return Err(format!("unknown metric kind {s:?}"));
            }
        };
        Ok(kind)
    }
}

impl Serialize for MetricKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// RPC payload size buckets for transmit-latency series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeClass {
    KiB1,
    KiB8,
    KiB64,
    KiB256,
}

impl SizeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::KiB1 => "1KiB",
            SizeClass::KiB8 => "8KiB",
            SizeClass::KiB64 => "64KiB",
            SizeClass::KiB256 => "256KiB",
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SizeClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "1kib" => Ok(SizeClass::KiB1),
            "8kib" => Ok(SizeClass::KiB8),
            "64kib" => Ok(SizeClass::KiB64),
            "256kib" => Ok(SizeClass::KiB256),
            other => Err(format!("unknown size class {other:?}")),
        }
    }
}

/// Application-facing metric family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AfmFamily {
    /// RPC transmit latency for one payload size class (seconds).
    TransmitLatency(SizeClass),
    /// Packet delivery rate (packets per second).
    DeliveryRate,
}

impl fmt::Display for AfmFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AfmFamily::TransmitLatency(_) => f.write_str("transmit_latency"),
            AfmFamily::DeliveryRate => f.write_str("delivery_rate"),
        }
    }
}

/// One application-facing series: a family plus the reported percentile
/// statistic (e.g. 99.0 for the p99 of the family's distribution).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AfmKind {
    pub family: AfmFamily,
    /// Percentile rank of the reported statistic, strictly inside (0, 100).
    pub stat: f64,
}

impl AfmKind {
    pub fn new(family: AfmFamily, stat: f64) -> Result<Self> {
        if !stat.is_finite() || stat <= 0.0 || stat >= 100.0 {
            return Err(Error::FractionOutOfRange {
                field: "stat",
                lo: 0.0,
                hi: 100.0,
                value: stat,
            });
        }
        Ok(Self { family, stat })
    }

    /// The reported percentile as a fraction in (0, 1).
    pub fn stat_fraction(&self) -> f64 {
        self.stat / 100.0
    }

    pub fn size_class(&self) -> Option<SizeClass> {
        match self.family {
            AfmFamily::TransmitLatency(sc) => Some(sc),
            AfmFamily::DeliveryRate => None,
        }
    }
}

/// Renders a percentile rank without a trailing `.0` for integral ranks.
fn fmt_stat(stat: f64) -> String {
    if stat.fract() == 0.0 {
        format!("{}", stat as i64)
    } else {
        format!("{stat}")
    }
}

impl fmt::Display for AfmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            AfmFamily::TransmitLatency(sc) => {
                write!(f, "transmit_latency:{sc}:p{}", fmt_stat(self.stat))
            }
            AfmFamily::DeliveryRate => write!(f, "delivery_rate:p{}", fmt_stat(self.stat)),
        }
    }
}

impl FromStr for AfmKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let (family, stat_part) = match parts.as_slice() {
            [fam, size, stat] if fam.eq_ignore_ascii_case("transmit_latency") => {
                let sc: SizeClass = size.parse()?;
                (AfmFamily::TransmitLatency(sc), *stat)
            }
            [fam, stat] if fam.eq_ignore_ascii_case("delivery_rate") => {
                (AfmFamily::DeliveryRate, *stat)
            }
            _ => {
                return Err(format!(
                    "unknown AFM kind {s:?}; expected transmit_latency:<size>:p<stat> \
                     or delivery_rate:p<stat>"
                ))
            }
        };
        let stat_str = stat_part
            .strip_prefix(['p', 'P'])
            .ok_or_else(|| format!("statistic must look like p99, got {stat_part:?}"))?;
        let stat: f64 = stat_str
            .parse()
            .map_err(|_| format!("bad percentile rank {stat_str:?}"))?;
        AfmKind::new(family, stat).map_err(|e| e.to_string())
    }
}

impl Serialize for AfmKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AfmKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// One joined observation: an NLM value and an AFM value for the same
/// fabric, window, scope, and traffic class.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinedSample {
    pub fabric: String,
    /// Epoch seconds; the window covers `[window_start, window_start + window_len)`.
    pub window_start: i64,
    pub window_len: i64,
    pub scope: Scope,
    pub qos: QosClass,
    pub nlm_kind: MetricKind,
    pub nlm_value: f64,
    pub afm_kind: AfmKind,
    pub afm_value: f64,
}

/// Clamps counter jitter on a utilization value.
///
/// Values in `(1, 1 + UTILIZATION_ALLOWANCE]` become exactly 1.0; larger
/// values are rejected as corrupt, negative values likewise.
pub fn clamp_utilization(value: f64) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::NonFinite {
            field: "utilization",
            value,
        });
    }
    if value < 0.0 {
        return Err(Error::Negative {
            field: "utilization",
            value,
        });
    }
    if value <= 1.0 {
        Ok(value)
    } else if value <= 1.0 + UTILIZATION_ALLOWANCE {
        Ok(1.0)
    } else {
        Err(Error::UtilizationOutOfRange {
            value,
            allowance: UTILIZATION_ALLOWANCE,
        })
    }
}

/// Checks every invariant of a joined sample and returns it with the
/// utilization clamp applied. The error names the violated invariant.
pub fn validate_sample(sample: JoinedSample) -> Result<JoinedSample> {
    let mut s = sample;
    if s.fabric.is_empty() {
        return Err(Error::EmptyIdentifier { field: "fabric" });
    }
    if let Scope::Block(b) = &s.scope {
        if b.is_empty() {
            return Err(Error::EmptyIdentifier { field: "block" });
        }
    }
    if s.window_len <= 0 {
        return Err(Error::NonPositiveWindow(s.window_len));
    }
    if !s.nlm_value.is_finite() {
        return Err(Error::NonFinite {
            field: "nlm_value",
            value: s.nlm_value,
        });
    }
    if s.nlm_kind.is_utilization() {
        s.nlm_value = clamp_utilization(s.nlm_value)?;
    } else if s.nlm_value < 0.0 {
        return Err(Error::Negative {
            field: "nlm_value",
            value: s.nlm_value,
        });
    }
    if !s.afm_value.is_finite() {
        return Err(Error::NonFinite {
            field: "afm_value",
            value: s.afm_value,
        });
    }
    if s.afm_value < 0.0 {
        return Err(Error::Negative {
            field: "afm_value",
            value: s.afm_value,
        });
    }
    AfmKind::new(s.afm_kind.family, s.afm_kind.stat)?;
    Ok(s)
}

/// Model family of a fitted relationship.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `y = slope * x + intercept`
    Linear,
    /// `y = slope * x / (1 - x) + intercept`
    Queueing,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Linear => f.write_str("linear"),
            ModelKind::Queueing => f.write_str("queueing"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ModelKind::Linear),
            "queueing" => Ok(ModelKind::Queueing),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

/// A fitted NLM-to-AFM quantile model with its evaluation scores.
///
/// Serialized with absent optional fields omitted entirely (never null), so
/// the JSON round-trips field-for-field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub kind: ModelKind,
    /// Slope of the (possibly transformed) linear relationship.
    pub slope: f64,
    pub intercept: f64,
    /// Conditional quantile the model predicts, in (0, 1).
    pub tau: f64,
    /// Asymmetry weight of the training loss, in (0, 1).
    pub alpha: f64,
    /// Upper NLM bound of the model's validity domain, present only when a
    /// knee was detected.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub knee_threshold: Option<f64>,
    /// Asymmetric squared loss on the training bucket points.
    pub train_amse: f64,
    /// Relative asymmetric RMS error on the held-out test bucket points.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_rarmse: Option<f64>,
    /// Fraction of test samples inside the validity domain.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coverage: Option<f64>,
}

/// Orientation of the envelope curve handed to knee detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KneeDirection {
    /// Latency-like: flat, then rising ever faster.
    ConvexIncreasing,
    /// Delivery-rate-like: flat, then dropping ever faster.
    ConcaveDecreasing,
}

/// Which conditional tail a bucket summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSide {
    /// Fit the tau quantile (latency: high tail is the bad tail).
    Upper,
    /// Fit the (1 - tau) quantile (delivery rate: low tail is the bad tail).
    Lower,
}

/// Tunable parameters of the end-to-end pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Conditional quantile to model, in (0, 1).
    pub target_quantile: f64,
    /// Asymmetric loss weight on overprediction, in (0, 1).
    pub alpha: f64,
    /// Minimum normalized difference-curve height for a knee, in (0, 1).
    pub curvature_threshold: f64,
    /// Largest acceptable test rARMSE for an `Accurate` verdict.
    pub error_threshold: f64,
    /// Equal-width bucket count for envelopes and regression.
    pub n_buckets: usize,
    /// Buckets with fewer samples than this are dropped.
    pub min_bucket_samples: usize,
    pub knee_direction: KneeDirection,
    pub tail_side: TailSide,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            target_quantile: 0.95,
            alpha: 0.5,
            curvature_threshold: 0.5,
            error_threshold: 0.15,
            n_buckets: 20,
            min_bucket_samples: 10,
            knee_direction: KneeDirection::ConvexIncreasing,
            tail_side: TailSide::Upper,
        }
    }
}

impl PipelineConfig {
    /// Default configuration adjusted for the NLM kind: max-style metrics
    /// use 20 buckets, mean-style metrics use 100 (their domains are much
    /// narrower, so finer buckets keep resolution comparable).
    pub fn default_for(nlm_kind: MetricKind) -> Self {
        let mut cfg = Self::default();
        if matches!(
            nlm_kind,
            MetricKind::AvgLinkUtilization | MetricKind::AvgAdjacencyUtilization
        ) {
            cfg.n_buckets = 100;
        }
        cfg
    }

    /// Default configuration for a full metric pair. Delivery-rate AFMs
    /// degrade downward, so their bad tail is the lower one and their
    /// envelope bends concave-decreasing.
    pub fn default_for_pair(nlm_kind: MetricKind, afm_kind: &AfmKind) -> Self {
        let mut cfg = Self::default_for(nlm_kind);
        if afm_kind.family == AfmFamily::DeliveryRate {
            cfg.tail_side = TailSide::Lower;
            cfg.knee_direction = KneeDirection::ConcaveDecreasing;
        }
        cfg
    }

    /// Rejects out-of-range parameters with the offending field named.
    pub fn validate(&self) -> Result<()> {
        let open_unit = |field: &'static str, value: f64| -> Result<()> {
            if !value.is_finite() || value <= 0.0 || value >= 1.0 {
                Err(Error::FractionOutOfRange {
                    field,
                    lo: 0.0,
                    hi: 1.0,
                    value,
                })
            } else {
                Ok(())
            }
        };
        open_unit("target_quantile", self.target_quantile)?;
        open_unit("alpha", self.alpha)?;
        open_unit("curvature_threshold", self.curvature_threshold)?;
        if !self.error_threshold.is_finite() || self.error_threshold <= 0.0 {
            return Err(Error::FractionOutOfRange {
                field: "error_threshold",
                lo: 0.0,
                hi: f64::INFINITY,
                value: self.error_threshold,
            });
        }
        if self.n_buckets < 2 {
            return Err(Error::TooFewBuckets {
                context: "pipeline config",
                needed: 2,
                got: self.n_buckets,
            });
        }
        if self.min_bucket_samples == 0 {
            return Err(Error::Empty {
                what: "min_bucket_samples",
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> JoinedSample {
        JoinedSample {
            fabric: "f1".into(),
            window_start: 1_600_000_000,
            window_len: 300,
            scope: Scope::FabricWide,
            qos: QosClass::Low,
            nlm_kind: MetricKind::MaxAdjacencyUtilization,
            nlm_value: 0.62,
            afm_kind: AfmKind {
                family: AfmFamily::TransmitLatency(SizeClass::KiB64),
                stat: 99.0,
            },
            afm_value: 0.0041,
        }
    }

    #[test]
    fn valid_sample_passes_unchanged() {
        let s = sample();
        assert_eq!(validate_sample(s.clone()).unwrap(), s);
    }

    #[test]
    fn clamp_tolerates_counter_jitter_only() {
        assert_eq!(clamp_utilization(1.015).unwrap(), 1.0);
        assert_eq!(clamp_utilization(1.02).unwrap(), 1.0);
        assert_eq!(clamp_utilization(0.985).unwrap(), 0.985);
        assert!(matches!(
            clamp_utilization(1.021),
            Err(Error::UtilizationOutOfRange { .. })
        ));
        assert!(matches!(
            clamp_utilization(-0.001),
            Err(Error::Negative { .. })
        ));
    }

    #[test]
    fn sample_clamp_applies_to_utilization_kinds() {
        let mut s = sample();
        s.nlm_value = 1.015;
        assert_eq!(validate_sample(s).unwrap().nlm_value, 1.0);

        let mut s = sample();
        s.nlm_kind = MetricKind::JainFairnessIndex;
        s.nlm_value = 1.015;
        // Not a utilization; no clamp, and 1.015 is simply kept.
        assert_eq!(validate_sample(s).unwrap().nlm_value, 1.015);
    }

    #[test]
    fn named_invariant_violations_are_rejected() {
        let mut s = sample();
        s.afm_value = -1.0;
        assert!(matches!(
            validate_sample(s),
            Err(Error::Negative {
                field: "afm_value",
                ..
            })
        ));

        let mut s = sample();
        s.window_len = 0;
        assert!(matches!(
            validate_sample(s),
            Err(Error::NonPositiveWindow(0))
        ));

        let mut s = sample();
        s.nlm_value = f64::NAN;
        assert!(matches!(
            validate_sample(s),
            Err(Error::NonFinite {
                field: "nlm_value",
                ..
            })
        ));

        let mut s = sample();
        s.fabric = String::new();
        assert!(matches!(
            validate_sample(s),
            Err(Error::EmptyIdentifier { field: "fabric" })
        ));
    }

    #[test]
    fn metric_kind_strings_round_trip() {
        let kinds = [
            MetricKind::LinkUtilization,
            MetricKind::AdjacencyUtilization,
            MetricKind::MaxLinkUtilization,
            MetricKind::AvgLinkUtilization,
            MetricKind::MaxAdjacencyUtilization,
            MetricKind::AvgAdjacencyUtilization,
            MetricKind::PercentileLinkUtilization(95),
            MetricKind::PercentileAdjacencyUtilization(50),
            MetricKind::P5P95DistanceLink,
            MetricKind::P5P95DistanceAdjacency,
            MetricKind::JainFairnessIndex,
        ];
        for kind in kinds {
            let s = kind.to_string();
            assert_eq!(s.parse::<MetricKind>().unwrap(), kind, "{s}");
        }
        assert_eq!(
            "mau".parse::<MetricKind>().unwrap(),
            MetricKind::MaxAdjacencyUtilization
        );
        assert!("p101_link_utilization".parse::<MetricKind>().is_err());
    }

    #[test]
    fn afm_kind_strings_round_trip() {
        let kinds = [
            AfmKind::new(AfmFamily::TransmitLatency(SizeClass::KiB1), 99.0).unwrap(),
            AfmKind::new(AfmFamily::TransmitLatency(SizeClass::KiB256), 99.9).unwrap(),
            AfmKind::new(AfmFamily::DeliveryRate, 1.0).unwrap(),
        ];
        for kind in kinds {
            let s = kind.to_string();
            assert_eq!(s.parse::<AfmKind>().unwrap(), kind, "{s}");
        }
        assert!("transmit_latency:64KiB:p0".parse::<AfmKind>().is_err());
        assert!("delivery_rate:p100".parse::<AfmKind>().is_err());
    }

    #[test]
    fn fitted_model_json_omits_absent_optionals() {
        let model = FittedModel {
            kind: ModelKind::Queueing,
            slope: 3.0,
            intercept: 0.5,
            tau: 0.95,
            alpha: 0.5,
            knee_threshold: None,
            train_amse: 0.01,
            test_rarmse: None,
            coverage: None,
        };
        let json = serde_json::to_string(&model).unwrap();
        assert!(!json.contains("knee_threshold"));
        assert!(!json.contains("null"));
        let back: FittedModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);

        let with_all = FittedModel {
            knee_threshold: Some(0.8),
            test_rarmse: Some(0.07),
            coverage: Some(0.93),
            ..model
        };
        let json = serde_json::to_string(&with_all).unwrap();
        let back: FittedModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, with_all);
    }

    #[test]
    fn defaults_match_documented_values() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.target_quantile, 0.95);
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.curvature_threshold, 0.5);
        assert_eq!(cfg.error_threshold, 0.15);
        assert_eq!(cfg.n_buckets, 20);
        assert_eq!(
            PipelineConfig::default_for(MetricKind::AvgLinkUtilization).n_buckets,
            100
        );
        assert_eq!(
            PipelineConfig::default_for(MetricKind::AvgAdjacencyUtilization).n_buckets,
            100
        );
        assert_eq!(
            PipelineConfig::default_for(MetricKind::MaxAdjacencyUtilization).n_buckets,
            20
        );

        let dr = AfmKind::new(AfmFamily::DeliveryRate, 1.0).unwrap();
        let cfg = PipelineConfig::default_for_pair(MetricKind::MaxAdjacencyUtilization, &dr);
        assert_eq!(cfg.tail_side, TailSide::Lower);
        assert_eq!(cfg.knee_direction, KneeDirection::ConcaveDecreasing);
    }

    #[test]
    fn config_validation_names_bad_fields() {
        let cfg = PipelineConfig {
            alpha: 1.0,
            ..PipelineConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(Error::FractionOutOfRange { field: "alpha", .. })
        ));
        let cfg = PipelineConfig {
            n_buckets: 1,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }
}
