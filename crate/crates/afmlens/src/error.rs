//! Crate-wide error type.
//!
//! Validation errors name the specific invariant that failed so callers can
//! report actionable diagnostics. Row-level ingestion problems are *not*
//! errors of this type; they are collected into parse reports so one bad
//! telemetry row never discards a whole file.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A float field that must be finite was NaN or infinite.
    #[error("{field} must be finite, got {value}")]
    NonFinite { field: &'static str, value: f64 },

    /// A value that must be non-negative was negative.
    #[error("{field} must be non-negative, got {value}")]
    Negative { field: &'static str, value: f64 },

    /// A utilization exceeded 1.0 by more than the counter-jitter allowance.
    #[error("utilization {value} exceeds 1.0 by more than {allowance}")]
    UtilizationOutOfRange { value: f64, allowance: f64 },

    /// A window length was zero or negative.
    #[error("window length must be positive, got {0}")]
    NonPositiveWindow(i64),

    /// A port speed was zero or negative.
    #[error("port speed must be positive, got {0}")]
    NonPositiveSpeed(f64),

    /// A telemetry record's window does not nest inside one target window.
    #[error("record window [{start}, {start}+{len}) straddles the {target}s window grid")]
    WindowMisaligned { start: i64, len: i64, target: i64 },

    /// A string identifier (fabric, block, port) was empty.
    #[error("{field} identifier must be non-empty")]
    EmptyIdentifier { field: &'static str },

    /// An operation that needs data received none.
    #[error("{what} must be non-empty")]
    Empty { what: &'static str },

    /// A fraction-valued parameter was outside its required open interval.
    #[error("{field} must lie in ({lo}, {hi}), got {value}")]
    FractionOutOfRange {
        field: &'static str,
        lo: f64,
        hi: f64,
        value: f64,
    },

    /// A percentile rank was outside [0, 100].
    #[error("percentile rank must lie in [0, 100], got {0}")]
    PercentileOutOfRange(f64),

    /// Inputs that must share one metric identity (fabric, scope, qos,
    /// metric kinds) did not.
    #[error("samples mix metric identities: {detail}")]
    MixedIdentities { detail: String },

    /// Two sketches with different compression parameters cannot merge.
    #[error("sketch compression mismatch: {left} vs {right}")]
    CompressionMismatch { left: f64, right: f64 },

    /// Paired prediction/truth slices had different lengths.
    #[error("predictions ({predictions}) and truths ({truths}) differ in length")]
    LengthMismatch { predictions: usize, truths: usize },

    /// A relative error was requested against a zero truth value.
    #[error("relative error undefined: truth value at index {index} is zero")]
    DivisionByZero { index: usize },

    /// Regression inputs had too little x spread to fit.
    #[error("{what}")]
    DegenerateInput { what: &'static str },

    /// Too few populated buckets survived to continue.
    #[error("{context}: needed at least {needed} populated buckets, got {got}")]
    TooFewBuckets {
        context: &'static str,
        needed: usize,
        got: usize,
    },

    /// The queueing transform is invalid at or beyond saturation.
    #[error("queueing transform undefined for utilization {value} >= {limit}")]
    SaturatedUtilization { value: f64, limit: f64 },

    /// Curve points violated a structural precondition (ordering, count).
    #[error("{0}")]
    InvalidCurve(&'static str),

    /// A generator specification violated its invariants.
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    /// The requested metric kind cannot be produced in this context.
    #[error("unsupported metric kind for {context}: {kind}")]
    UnsupportedMetric { context: &'static str, kind: String },

    /// A series was too short for the requested train/test split.
    #[error("series spans {span_s}s, shorter than train+test {needed_s}s")]
    SpanTooShort { span_s: i64, needed_s: i64 },

    /// Duplicate key within one side of a join.
    #[error("duplicate join key: {0}")]
    DuplicateKey(String),

    /// A telemetry stream could not be read at all.
    #[error("unreadable input: {0}")]
    Io(#[from] std::io::Error),

    /// A header was missing a required column.
    #[error("missing required column {column:?} in {format} header")]
    MissingColumn {
        column: &'static str,
        format: &'static str,
    },

    /// Serialized payload (report, sketch) could not be decoded.
    #[error("decode error: {0}")]
    Decode(#[from] serde_json::Error),
}
