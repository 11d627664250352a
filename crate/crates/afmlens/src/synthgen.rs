//! Synthetic trace generation with known ground truth.
//!
//! A generator spec fixes a base curve (linear or queueing-shaped), an
//! optional quadratic penalty beyond a knee, and multiplicative lognormal
//! noise. Each sample draws from its own forked RNG stream, so generation
//! is order-independent and runs data-parallel without changing output.
//!
//! Generated NLM values are quantized onto the octet grid of the emitted
//! telemetry (one 100 Gb/s link observed over the sample's window), which
//! makes emit-then-reingest round trips bit-exact: parsing the emitted
//! files and rejoining them reproduces the generated samples identically.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::Format;
use crate::model::{
    validate_sample, AfmKind, JoinedSample, MetricKind, ModelKind, QosClass, Scope,
};
use crate::par;
use crate::rng::SplitMix64;
use crate::sketch::QuantileSketch;

/// Port speed the emitter pretends the fabric runs at.
pub const EMIT_SPEED_BPS: f64 = 100e9;
/// Sub-window records emitted per sample window.
pub const EMIT_SUBWINDOWS: i64 = 10;

/// Ground-truth description of one synthetic metric pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Base curve family: `y = beta*x + c` or `y = beta*x/(1-x) + c`.
    pub kind: ModelKind,
    pub beta: f64,
    pub c: f64,
    /// If set, samples beyond this x gain `penalty_slope * (x - knee_x)^2`.
    pub knee_x: Option<f64>,
    pub penalty_slope: f64,
    /// Lognormal noise scale: `y = base * exp(sigma * N(0,1))`.
    pub sigma: f64,
    pub n: usize,
    pub seed: u64,
    /// NLM sampling range, a sub-interval of [0, 1).
    pub x_lo: f64,
    pub x_hi: f64,
    pub fabric: String,
    /// Epoch start of the first window; must sit on the window grid.
    pub start_epoch_s: i64,
    pub window_len_s: i64,
    pub qos: QosClass,
    pub scope: Scope,
    pub nlm_kind: MetricKind,
    pub afm_kind: AfmKind,
}

impl GeneratorSpec {
    /// A linear latency pair on sensible defaults; callers override fields.
    pub fn example(kind: ModelKind) -> Self {
        Self {
            kind,
            beta: 2.0,
            c: 1.0,
            knee_x: None,
            penalty_slope: 0.0,
            sigma: 0.05,
            n: 1000,
            seed: 1,
            x_lo: 0.05,
            x_hi: 0.9,
            fabric: "synth".into(),
            start_epoch_s: 0,
            window_len_s: 300,
            qos: QosClass::High,
            scope: Scope::FabricWide,
            nlm_kind: MetricKind::MaxLinkUtilization,
            afm_kind: "transmit_latency:64KiB:p99".parse().expect("valid kind"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n == 0 {
            return err("n must be at least 1".into());
        }
        for (name, v) in [
            ("beta", self.beta),
            ("c", self.c),
            ("penalty_slope", self.penalty_slope),
        ] {
            if !v.is_finite() {
                return err(format!("{name} must be finite, got {v}"));
            }
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return err(format!(
                "sigma must be finite and non-negative, got {}",
                self.sigma
            ));
        }
        if !self.x_lo.is_finite()
            || !self.x_hi.is_finite()
            || !(0.0..1.0).contains(&self.x_lo)
            || self.x_hi <= self.x_lo
            || self.x_hi > 1.0
        {
            return err(format!(
                "x range [{}, {}) must satisfy 0 <= x_lo < x_hi <= 1",
                self.x_lo, self.x_hi
            ));
        }
        if self.kind == ModelKind::Queueing && self.x_hi >= 1.0 {
            return err("queueing curves need x_hi < 1".into());
        }
        if let Some(k) = self.knee_x {
            if !(self.x_lo < k && k < self.x_hi) {
                return err(format!(
                    "knee_x {} must lie inside the x range ({}, {})",
                    k, self.x_lo, self.x_hi
                ));
            }
        }
        if self.fabric.is_empty() {
            return err("fabric must be non-empty".into());
        }
        if self.window_len_s <= 0 {
            return Err(Error::NonPositiveWindow(self.window_len_s));
        }
        if self.start_epoch_s.rem_euclid(self.window_len_s) != 0 {
            return err(format!(
                "start_epoch_s {} must sit on the {}s window grid",
                self.start_epoch_s, self.window_len_s
            ));
        }
        if !self.nlm_kind.is_utilization() {
            return Err(Error::UnsupportedMetric {
                context: "synthetic generation",
                kind: self.nlm_kind.to_string(),
            });
        }
        // The noise is multiplicative, so the base curve must stay positive.
        // All curve pieces are monotone between these probe points.
        let mut probes = vec![self.x_lo, self.x_hi];
        probes.extend(self.knee_x);
        for x in probes {
            if self.base_value(x) <= 0.0 {
                return err(format!(
                    "base curve must stay positive over the x range; got {} at x={x}",
                    self.base_value(x)
                ));
            }
        }
        Ok(())
    }

    /// Noise-free curve value at `x`.
    pub fn base_value(&self, x: f64) -> f64 {
        let mut base = match self.kind {
            ModelKind::Linear => self.beta * x + self.c,
            ModelKind::Queueing => self.beta * x / (1.0 - x) + self.c,
        };
        if let Some(k) = self.knee_x {
            if x > k {
                base += self.penalty_slope * (x - k) * (x - k);
            }
        }
        base
    }

    /// Generates the joined samples: one per consecutive window.
    ///
    /// Sample `i` draws from `SplitMix64::fork(seed, i)`, so any prefix of
    /// a larger run equals a smaller run with the same seed.
    pub fn generate(&self) -> Result<Vec<JoinedSample>> {
        self.validate()?;
        let spec = self;
        par::map_indexed(self.n, |i| -> Result<JoinedSample> {
            let mut rng = SplitMix64::fork(spec.seed, i as u64);
            let x = quantize_to_octet_grid(rng.next_range(spec.x_lo, spec.x_hi), spec.window_len_s);
            let base = spec.base_value(x);
            if base <= 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "base curve non-positive at x={x}"
                )));
            }
            let y = base * (spec.sigma * rng.next_standard_normal()).exp();
            validate_sample(JoinedSample {
                fabric: spec.fabric.clone(),
                window_start: spec.start_epoch_s + i as i64 * spec.window_len_s,
                window_len: spec.window_len_s,
                scope: spec.scope.clone(),
                qos: spec.qos,
                nlm_kind: spec.nlm_kind,
                nlm_value: x,
                afm_kind: spec.afm_kind,
                afm_value: y,
            })
        })
        .into_iter()
        .collect()
    }
}

/// Snaps a raw utilization onto the grid of values an integer octet counter
/// can express over `window_len_s` at the emitted port speed.
fn quantize_to_octet_grid(x_raw: f64, window_len_s: i64) -> f64 {
    let capacity_octets = EMIT_SPEED_BPS * window_len_s as f64 / 8.0;
    let octets = (x_raw * capacity_octets).round();
    octets * 8.0 / (window_len_s as f64 * EMIT_SPEED_BPS)
}

/// How `emit_files` serializes the AFM side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfmMode {
    /// One scalar percentile row per window.
    Scalar,
    /// One single-value sketch row per window.
    Sketch,
}

impl std::fmt::Display for AfmMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AfmMode::Scalar => "scalar",
            AfmMode::Sketch => "sketch",
        })
    }
}

impl std::str::FromStr for AfmMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "scalar" => Ok(AfmMode::Scalar),
            "sketch" => Ok(AfmMode::Sketch),
            other => Err(format!(
                "unknown AFM mode {other:?}; expected scalar or sketch"
            )),
        }
    }
}

/// Emission settings for [`emit_files`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmitOptions {
    pub format: Format,
    pub afm_mode: AfmMode,
}

struct EmitIdentity<'a> {
    scope: &'a Scope,
    afm_kind: AfmKind,
    window_len: i64,
}

fn emit_identity<'a>(samples: &'a [JoinedSample]) -> Result<EmitIdentity<'a>> {
    let Some(first) = samples.first() else {
        return Err(Error::Empty {
            what: "samples to emit",
        });
    };
    for s in samples {
        if s.scope != first.scope
            || s.qos != first.qos
            || s.fabric != first.fabric
            || s.nlm_kind != first.nlm_kind
            || s.afm_kind != first.afm_kind
            || s.window_len != first.window_len
        {
            return Err(Error::MixedIdentities {
                detail: "emitted samples must share one metric pair identity".into(),
            });
        }
    }
    // Only utilization kinds invert to octet counters; a fairness index or
    // percentile distance has no single-link preimage.
    if !first.nlm_kind.is_utilization() {
        return Err(Error::UnsupportedMetric {
            context: "telemetry emission",
            kind: first.nlm_kind.to_string(),
        });
    }
    Ok(EmitIdentity {
        scope: &first.scope,
        afm_kind: first.afm_kind,
        window_len: first.window_len,
    })
}

/// Writes joined samples back out as raw telemetry: port-counter records
/// (split into sub-windows with octets conserved) and AFM rows.
///
/// The emitted fabric has one monitored link, so every link-utilization
/// aggregate of it equals the sample's NLM value and reingestion
/// reproduces the samples exactly.
pub fn emit_files<W1: Write, W2: Write>(
    samples: &[JoinedSample],
    nlm_out: W1,
    afm_out: W2,
    options: &EmitOptions,
) -> Result<()> {
    let identity = emit_identity(samples)?;
    let (src_block, dst_block) = match identity.scope {
        Scope::FabricWide => ("ab1", "ab2"),
        Scope::Block(b) => (b.as_str(), b.as_str()),
    };
    let sub_len = if identity.window_len % EMIT_SUBWINDOWS == 0 {
        identity.window_len / EMIT_SUBWINDOWS
    } else {
        identity.window_len
    };
    let subs = identity.window_len / sub_len;

    emit_nlm(
        samples,
        nlm_out,
        options.format,
        src_block,
        dst_block,
        sub_len,
        subs,
    )?;
    emit_afm(
        samples,
        afm_out,
        options,
        identity.afm_kind,
        src_block,
        dst_block,
    )
}

fn sample_octets(s: &JoinedSample) -> u64 {
    (s.nlm_value * EMIT_SPEED_BPS * s.window_len as f64 / 8.0).round() as u64
}

fn emit_nlm<W: Write>(
    samples: &[JoinedSample],
    out: W,
    format: Format,
    src_block: &str,
    dst_block: &str,
    sub_len: i64,
    subs: i64,
) -> Result<()> {
    let stage = match samples[0].scope {
        Scope::FabricWide => "spine",
        Scope::Block(_) => "tor",
    };
    let mut rows: Vec<(i64, u64)> = Vec::new();
    let write_sample = |s: &JoinedSample, rows: &mut Vec<(i64, u64)>| {
        let total = sample_octets(s);
        let per = total / subs as u64;
        let extra = total % subs as u64;
        for j in 0..subs {
            // The first `extra` sub-windows carry one more octet, so the
            // sub-records sum exactly to the window total.
            let octets = per + u64::from((j as u64) < extra);
            rows.push((s.window_start + j * sub_len, octets));
        }
    };
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record([
                "fabric",
                "stage",
                "port_id",
                "peer_port_id",
                "port_speed_bps",
                "src_block",
                "dst_block",
                "window_start_epoch_s",
                "window_len_s",
                "outgoing_octets",
                "incoming_octets",
            ])
            .map_err(std::io::Error::other)?;
            for s in samples {
                rows.clear();
                write_sample(s, &mut rows);
                for &(start, octets) in &rows {
                    w.write_record([
                        s.fabric.as_str(),
                        stage,
                        "p1",
                        "p2",
                        &format!("{EMIT_SPEED_BPS}"),
                        src_block,
                        dst_block,
                        &start.to_string(),
                        &sub_len.to_string(),
                        &octets.to_string(),
                        &octets.to_string(),
                    ])
                    .map_err(std::io::Error::other)?;
                }
            }
            w.flush()?;
        }
        Format::Jsonl => {
            let mut out = out;
            for s in samples {
                rows.clear();
                write_sample(s, &mut rows);
                for &(start, octets) in &rows {
                    let row = serde_json::json!({
                        "fabric": s.fabric,
                        "stage": stage,
                        "port_id": "p1",
                        "peer_port_id": "p2",
                        "port_speed_bps": EMIT_SPEED_BPS,
                        "src_block": src_block,
                        "dst_block": dst_block,
                        "window_start_epoch_s": start,
                        "window_len_s": sub_len,
                        "outgoing_octets": octets,
                        "incoming_octets": octets,
                    });
                    writeln!(out, "{row}")?;
                }
            }
            out.flush()?;
        }
    }
    Ok(())
}

fn emit_afm<W: Write>(
    samples: &[JoinedSample],
    out: W,
    options: &EmitOptions,
    afm_kind: AfmKind,
    src_block: &str,
    dst_block: &str,
) -> Result<()> {
    let family = afm_kind.family.to_string();
    let size_class = afm_kind
        .size_class()
        .map(|sc| sc.to_string())
        .unwrap_or_default();
    // AFM rows carry blocks only under block scope; fabric-wide rows leave
    // them empty.
    let (src_block, dst_block) = if src_block == dst_block {
        (src_block, dst_block)
    } else {
        ("", "")
    };
    let single_value_sketch = |value: f64| -> Result<String> {
        let mut sketch = QuantileSketch::new(100.0)?;
        sketch.insert(value)?;
        Ok(sketch.to_json())
    };
    match options.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            let mut header = vec![
                "fabric",
                "window_start_epoch_s",
                "window_len_s",
                "qos",
                "src_block",
                "dst_block",
                "afm_family",
                "size_class",
            ];
            match options.afm_mode {
                AfmMode::Scalar => header.extend(["stat", "value"]),
                AfmMode::Sketch => header.push("sketch_json"),
            }
            w.write_record(&header).map_err(std::io::Error::other)?;
            for s in samples {
                let mut row = vec![
                    s.fabric.clone(),
                    s.window_start.to_string(),
                    s.window_len.to_string(),
                    s.qos.to_string(),
                    src_block.to_string(),
                    dst_block.to_string(),
                    family.clone(),
                    size_class.clone(),
                ];
                match options.afm_mode {
                    AfmMode::Scalar => {
                        row.push(format!("p{}", afm_kind.stat));
                        row.push(format!("{}", s.afm_value));
                    }
                    AfmMode::Sketch => row.push(single_value_sketch(s.afm_value)?),
                }
                w.write_record(&row).map_err(std::io::Error::other)?;
            }
            w.flush()?;
        }
        Format::Jsonl => {
            let mut out = out;
            for s in samples {
                let mut row = serde_json::json!({
                    "fabric": s.fabric,
                    "window_start_epoch_s": s.window_start,
                    "window_len_s": s.window_len,
                    "qos": s.qos,
                    "src_block": src_block,
                    "dst_block": dst_block,
                    "afm_family": family,
                    "size_class": size_class,
                });
                let map = row.as_object_mut().expect("object literal");
                match options.afm_mode {
                    AfmMode::Scalar => {
                        map.insert("stat".into(), format!("p{}", afm_kind.stat).into());
                        map.insert(
                            "value".into(),
                            serde_json::Number::from_f64(s.afm_value)
                                .ok_or(Error::NonFinite {
                                    field: "afm_value",
                                    value: s.afm_value,
                                })?
                                .into(),
                        );
                    }
                    AfmMode::Sketch => {
                        map.insert(
                            "sketch_json".into(),
                            single_value_sketch(s.afm_value)?.into(),
                        );
                    }
                }
                writeln!(out, "{row}")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}
