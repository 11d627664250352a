//! Network-level metric derivation from port counters.
//!
//! Utilization of a link over a window is the sum of outgoing bits divided
//! by what the port could have carried (`speed * window_len`). Adjacency
//! utilization aggregates the parallel links between one pair of blocks as
//! a capacity-weighted mean, which equals total bits over total capacity.
//! Fabric-wide metrics summarize the per-link or per-adjacency utilization
//! set for one window: max, mean, percentiles, tail spread, and Jain's
//! fairness index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{clamp_utilization, MetricKind};
use crate::stats;

/// Topology stage of a port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Tor,
    Aggregation,
    Spine,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Tor => "tor",
            Stage::Aggregation => "aggregation",
            Stage::Spine => "spine",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tor" => Ok(Stage::Tor),
            "aggregation" => Ok(Stage::Aggregation),
            "spine" => Ok(Stage::Spine),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

/// One port's counters for one telemetry window.
///
/// The window covers `[window_start, window_start + window_len)` epoch
/// seconds. Octet counters are totals over that window, not rates.
#[derive(Debug, Clone, PartialEq)]
pub struct PortRecord {
    pub fabric: String,
    pub stage: Stage,
    pub port_id: String,
    pub peer_port_id: String,
    pub port_speed_bps: f64,
    /// Block housing this port.
    pub src_block: String,
    /// Block housing the peer port.
    pub dst_block: String,
    pub window_start: i64,
    pub window_len: i64,
    pub outgoing_octets: u64,
    pub incoming_octets: u64,
}

impl PortRecord {
    /// Whether the link leaves its block (fabric-level) or stays inside it.
    pub fn is_inter_block(&self) -> bool {
        self.src_block != self.dst_block
    }
}

/// Utilization of one link over one window: outgoing bits over capacity,
/// with the counter-jitter clamp applied.
pub fn link_utilization(
    outgoing_octets: u64,
    window_len_s: i64,
    port_speed_bps: f64,
) -> Result<f64> {
    if window_len_s <= 0 {
        return Err(Error::NonPositiveWindow(window_len_s));
    }
    if !port_speed_bps.is_finite() || port_speed_bps <= 0.0 {
        return Err(Error::NonPositiveSpeed(port_speed_bps));
    }
    let bits = outgoing_octets as f64 * 8.0;
    clamp_utilization(bits / (window_len_s as f64 * port_speed_bps))
}

/// Utilization of a block-to-block adjacency: capacity-weighted mean over
/// its member links' `(utilization, speed_bps)` pairs.
pub fn adjacency_utilization(links: &[(f64, f64)]) -> Result<f64> {
    if links.is_empty() {
        return Err(Error::Empty {
            what: "adjacency link set",
        });
    }
    let mut weighted = 0.0;
    let mut capacity = 0.0;
    for &(util, speed) in links {
        if !util.is_finite() {
            return Err(Error::NonFinite {
                field: "link utilization",
                value: util,
            });
        }
        if !speed.is_finite() || speed <= 0.0 {
            return Err(Error::NonPositiveSpeed(speed));
        }
        weighted += util * speed;
        capacity += speed;
    }
    clamp_utilization(weighted / capacity)
}

/// Summary statistic over one window's utilization set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregateStat {
    Max,
    Avg,
    /// k-th percentile, linear interpolation between order statistics.
    Percentile(u8),
    /// 95th minus 5th percentile: how spread out load is.
    P5P95Distance,
    /// Jain's fairness index `(sum x)^2 / (n * sum x^2)`.
    JainFairness,
}

/// The summary a fabric-level metric kind applies to its utilization set,
/// or `None` for the per-link/per-adjacency kinds that are not aggregates.
pub fn aggregate_stat(kind: MetricKind) -> Option<AggregateStat> {
    match kind {
        MetricKind::LinkUtilization | MetricKind::AdjacencyUtilization => None,
        MetricKind::MaxLinkUtilization | MetricKind::MaxAdjacencyUtilization => {
            Some(AggregateStat::Max)
        }
        MetricKind::AvgLinkUtilization | MetricKind::AvgAdjacencyUtilization => {
            Some(AggregateStat::Avg)
        }
        MetricKind::PercentileLinkUtilization(k)
        | MetricKind::PercentileAdjacencyUtilization(k) => Some(AggregateStat::Percentile(k)),
        MetricKind::P5P95DistanceLink | MetricKind::P5P95DistanceAdjacency => {
            Some(AggregateStat::P5P95Distance)
        }
        MetricKind::JainFairnessIndex => Some(AggregateStat::JainFairness),
    }
}

/// Aggregates one window's utilization values.
///
/// An all-zero set is perfectly even, so Jain's index reports 1.0 for it
/// rather than dividing zero by zero.
pub fn fabric_aggregate(values: &[f64], stat: AggregateStat) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty {
            what: "utilization set",
        });
    }
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                field: "utilization",
                value: v,
            });
        }
    }
    let result = match stat {
        AggregateStat::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AggregateStat::Avg => values.iter().sum::<f64>() / values.len() as f64,
        AggregateStat::Percentile(k) => {
            if k > 100 {
                return Err(Error::PercentileOutOfRange(k as f64));
            }
            stats::quantile_type7(values, k as f64 / 100.0)
        }
        AggregateStat::P5P95Distance => {
            let sorted = stats::sorted(values);
            stats::quantile_type7_sorted(&sorted, 0.95)
                - stats::quantile_type7_sorted(&sorted, 0.05)
        }
        AggregateStat::JainFairness => {
            let sum: f64 = values.iter().sum();
            let sum_sq: f64 = values.iter().map(|v| v * v).sum();
            if sum_sq == 0.0 {
                1.0
            } else {
                sum * sum / (values.len() as f64 * sum_sq)
            }
        }
    };
    Ok(result)
}
