//! Models that relate network-level metrics (NLMs) of a datacenter fabric to
//! application-facing metrics (AFMs) such as RPC transmit latency and packet
//! delivery rates.
//!
//! The crate is organized as a pipeline:
//!
//! * [`model`] defines the shared vocabulary: metric kinds, joined samples,
//!   fitted models, and pipeline configuration.
//! * [`sketch`] provides a mergeable quantile sketch for compact AFM
//!   distributions.
//! * [`metrics`] derives link, adjacency, and fabric-wide utilization
//!   aggregates from port counters.
//! * [`ingestion`] parses NLM/AFM telemetry files, re-aggregates counters to
//!   a common window length, and joins the two sides into analysis samples.
//! * [`knee`] locates the utilization knee of an AFM-vs-NLM envelope curve.
//! * [`regression`] fits linear and queueing-transform models to conditional
//!   quantiles under an asymmetric squared loss.
//! * [`pipeline`] combines the above into train/test model selection,
//!   stability sweeps over sliding windows, and sensitivity sweeps over
//!   loss/knee parameter grids.
//! * [`synthgen`] generates deterministic synthetic traces with known ground
//!   truth for calibration and testing.
//!
//! Batch evaluation loops (sample generation, per-window fits, grid sweeps)
//! run data-parallel when the `parallel` feature (default) is enabled and
//! fall back to sequential iteration when it is disabled. Results are
//! identical in both modes.

pub mod error;
pub mod ingestion;
pub mod knee;
pub mod metrics;
pub mod model;
pub(crate) mod par;
pub mod pipeline;
pub mod regression;
pub mod rng;
pub mod sketch;
pub(crate) mod stats;
pub mod synthgen;

pub use error::{Error, Result};
