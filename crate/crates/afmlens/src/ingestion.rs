//! Telemetry ingestion: file parsing, window reaggregation, and joining.
//!
//! Port counters arrive as sub-window records (typically 30 s) and are
//! reaggregated onto a coarser window grid (typically 300 s) by summing
//! octets, which conserves counters exactly. Application metrics arrive
//! per window either as scalar percentile readings or as serialized
//! quantile sketches. Joining matches the two series on
//! (fabric, window, scope, qos) and yields one `JoinedSample` per match.
//!
//! Parsing is forgiving per row and strict per file: a malformed row is
//! recorded in the parse report and skipped, while a header missing a
//! required column fails the whole file.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, PortRecord};
use crate::model::{
    validate_sample, AfmFamily, AfmKind, JoinedSample, MetricKind, QosClass, Scope,
};
use crate::sketch::QuantileSketch;

/// Standard reaggregation window, seconds.
pub const STANDARD_WINDOW_S: i64 = 300;

/// Wire format of a telemetry file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        })
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown format {other:?}; expected csv or jsonl")),
        }
    }
}

/// One skipped input row and why.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    /// 1-based line number in the input (header line included for CSV).
    pub line: u64,
    pub message: String,
}

/// Outcome of parsing one telemetry file.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParseReport {
    pub rows_seen: usize,
    pub rows_ok: usize,
    pub errors: Vec<RowError>,
}

impl ParseReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Percentile reading or full distribution sketch of one AFM row.
#[derive(Debug, Clone, PartialEq)]
pub enum AfmPayload {
    /// One percentile of the window's distribution, e.g. stat 99.0 = p99.
    Scalar {
        stat: f64,
        value: f64,
    },
    Sketch(QuantileSketch),
}

/// One application-facing metric row for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct AfmRecord {
    pub fabric: String,
    pub window_start: i64,
    pub window_len: i64,
    pub qos: QosClass,
    /// Source block, empty for fabric-wide rows.
    pub src_block: String,
    /// Destination block, empty for fabric-wide rows.
    pub dst_block: String,
    pub family: AfmFamily,
    pub payload: AfmPayload,
}

impl AfmRecord {
    /// The scope this row can join under: fabric-wide when both blocks are
    /// empty, block scope when source and destination agree. Rows naming
    /// two different blocks belong to neither scope.
    pub fn scope(&self) -> Option<Scope> {
        if self.src_block.is_empty() && self.dst_block.is_empty() {
            Some(Scope::FabricWide)
        } else if self.src_block == self.dst_block {
            Some(Scope::Block(self.src_block.clone()))
        } else {
            None
        }
    }
}

const NLM_COLUMNS: [&str; 11] = [
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
];

const AFM_BASE_COLUMNS: [&str; 8] = [
    "fabric",
    "window_start_epoch_s",
    "window_len_s",
    "qos",
    "src_block",
    "dst_block",
    "afm_family",
    "size_class",
];

#[derive(Debug, Deserialize)]
struct RawPortRow {
    fabric: String,
    stage: String,
    port_id: String,
    peer_port_id: String,
    port_speed_bps: f64,
    src_block: String,
    dst_block: String,
    window_start_epoch_s: i64,
    window_len_s: i64,
    outgoing_octets: u64,
    incoming_octets: u64,
}

#[derive(Debug, Deserialize)]
struct RawAfmRow {
    fabric: String,
    window_start_epoch_s: i64,
    window_len_s: i64,
    qos: String,
    #[serde(default)]
    src_block: String,
    #[serde(default)]
    dst_block: String,
    afm_family: String,
    #[serde(default)]
    size_class: String,
    stat: Option<String>,
    value: Option<f64>,
    sketch_json: Option<String>,
}

fn check_header(
    headers: &csv::StringRecord,
    required: &[&'static str],
    format: &'static str,
) -> Result<()> {
    for &column in required {
        if !headers.iter().any(|h| h == column) {
            return Err(Error::MissingColumn { column, format });
        }
    }
    Ok(())
}

fn convert_port_row(raw: RawPortRow) -> std::result::Result<PortRecord, String> {
    if raw.fabric.is_empty() {
        return Err("fabric must be non-empty".into());
    }
    if raw.port_id.is_empty() || raw.peer_port_id.is_empty() {
        return Err("port_id and peer_port_id must be non-empty".into());
    }
    if raw.src_block.is_empty() || raw.dst_block.is_empty() {
        return Err("src_block and dst_block must be non-empty".into());
    }
    let stage = raw.stage.parse()?;
    if !raw.port_speed_bps.is_finite() || raw.port_speed_bps <= 0.0 {
        return Err(format!(
            "port speed must be positive, got {}",
            raw.port_speed_bps
        ));
    }
    if raw.window_len_s <= 0 {
        return Err(format!(
            "window length must be positive, got {}",
            raw.window_len_s
        ));
    }
    Ok(PortRecord {
        fabric: raw.fabric,
        stage,
        port_id: raw.port_id,
        peer_port_id: raw.peer_port_id,
        port_speed_bps: raw.port_speed_bps,
        src_block: raw.src_block,
        dst_block: raw.dst_block,
        window_start: raw.window_start_epoch_s,
        window_len: raw.window_len_s,
        outgoing_octets: raw.outgoing_octets,
        incoming_octets: raw.incoming_octets,
    })
}

fn parse_stat_rank(text: &str) -> std::result::Result<f64, String> {
    let body = text.strip_prefix(['p', 'P']).unwrap_or(text);
    body.parse::<f64>()
        .map_err(|_| format!("bad percentile rank {text:?}"))
}

fn convert_afm_row(raw: RawAfmRow) -> std::result::Result<AfmRecord, String> {
    if raw.fabric.is_empty() {
        return Err("fabric must be non-empty".into());
    }
    if raw.window_len_s <= 0 {
        return Err(format!(
            "window length must be positive, got {}",
            raw.window_len_s
        ));
    }
    let qos: QosClass = raw.qos.parse()?;
    let family = match raw.afm_family.as_str() {
        "transmit_latency" => {
            if raw.size_class.is_empty() {
                return Err("transmit_latency rows need a size_class".into());
            }
            AfmFamily::TransmitLatency(raw.size_class.parse()?)
        }
        "delivery_rate" => {
            if !raw.size_class.is_empty() {
                return Err(format!(
                    "delivery_rate rows must leave size_class empty, got {:?}",
                    raw.size_class
                ));
            }
            AfmFamily::DeliveryRate
        }
        other => return Err(format!("unknown afm_family {other:?}")),
    };
    let sketch_json = raw.sketch_json.filter(|s| !s.trim().is_empty());
    let stat = raw.stat.filter(|s| !s.is_empty());
    let payload = match (sketch_json, stat, raw.value) {
        (Some(json), None, None) => {
            AfmPayload::Sketch(QuantileSketch::from_json(&json).map_err(|e| e.to_string())?)
        }
        (Some(_), _, _) => return Err("row mixes sketch_json with scalar stat/value fields".into()),
        (None, Some(stat), Some(value)) => {
            let rank = parse_stat_rank(&stat)?;
            AfmKind::new(family, rank).map_err(|e| e.to_string())?;
            if !value.is_finite() || value < 0.0 {
                return Err(format!(
                    "value must be finite and non-negative, got {value}"
                ));
            }
            AfmPayload::Scalar { stat: rank, value }
        }
        (None, _, _) => return Err("row needs stat and value, or sketch_json".into()),
    };
    Ok(AfmRecord {
        fabric: raw.fabric,
        window_start: raw.window_start_epoch_s,
        window_len: raw.window_len_s,
        qos,
        src_block: raw.src_block,
        dst_block: raw.dst_block,
        family,
        payload,
    })
}

/// Parses rows of `reader`, converting each with `convert` and collecting
/// per-row failures into the report instead of aborting the file.
fn parse_rows<R, Raw, T>(
    reader: R,
    format: Format,
    required: &[&'static str],
    format_label: &'static str,
    header_extra: impl Fn(&csv::StringRecord) -> Result<()>,
    convert: impl Fn(Raw) -> std::result::Result<T, String>,
) -> Result<(Vec<T>, ParseReport)>
where
    R: Read,
    Raw: serde::de::DeserializeOwned,
{
    let mut out = Vec::new();
    let mut report = ParseReport::default();
    let push_err = |report: &mut ParseReport, line: u64, message: String| {
        report.errors.push(RowError { line, message });
    };
    match format {
        Format::Csv => {
            let mut rdr = csv::Reader::from_reader(reader);
            let headers = rdr.headers().map_err(std::io::Error::other)?.clone();
            check_header(&headers, required, format_label)?;
            header_extra(&headers)?;
            for (i, row) in rdr.deserialize::<Raw>().enumerate() {
                let line = i as u64 + 2;
                report.rows_seen += 1;
                match row.map_err(|e| e.to_string()).and_then(&convert) {
                    Ok(rec) => {
                        report.rows_ok += 1;
                        out.push(rec);
                    }
                    Err(msg) => push_err(&mut report, line, msg),
                }
            }
        }
        Format::Jsonl => {
            for (i, line_res) in BufReader::new(reader).lines().enumerate() {
                let line = i as u64 + 1;
                let text = line_res?;
                if text.trim().is_empty() {
                    continue;
                }
                report.rows_seen += 1;
                match serde_json::from_str::<Raw>(&text)
                    .map_err(|e| e.to_string())
                    .and_then(&convert)
                {
                    Ok(rec) => {
                        report.rows_ok += 1;
                        out.push(rec);
                    }
                    Err(msg) => push_err(&mut report, line, msg),
                }
            }
        }
    }
    Ok((out, report))
}

/// Parses port-counter telemetry. Malformed rows are skipped and reported.
pub fn parse_port_records<R: Read>(
    reader: R,
    format: Format,
) -> Result<(Vec<PortRecord>, ParseReport)> {
    parse_rows(
        reader,
        format,
        &NLM_COLUMNS,
        "port telemetry",
        |_| Ok(()),
        convert_port_row,
    )
}

/// Parses application-metric telemetry, scalar or sketch payloads.
/// Malformed rows are skipped and reported.
pub fn parse_afm_records<R: Read>(
    reader: R,
    format: Format,
) -> Result<(Vec<AfmRecord>, ParseReport)> {
    parse_rows(
        reader,
        format,
        &AFM_BASE_COLUMNS,
        "application telemetry",
        |headers| {
            // Scalar files carry stat+value; sketch files carry sketch_json.
            let has = |c: &str| headers.iter().any(|h| h == c);
            if has("sketch_json") || (has("stat") && has("value")) {
                Ok(())
            } else {
                Err(Error::MissingColumn {
                    column: "stat",
                    format: "application telemetry",
                })
            }
        },
        convert_afm_row,
    )
}

/// Identity of one joinable window: where, when, and for which traffic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JoinKey {
    pub fabric: String,
    pub window_start: i64,
    pub scope: Scope,
    pub qos: QosClass,
}

impl std::fmt::Display for JoinKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.fabric, self.window_start, self.scope, self.qos
        )
    }
}

/// One network-level metric value for one window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NlmPoint {
    pub key: JoinKey,
    pub kind: MetricKind,
    pub value: f64,
}

/// What reaggregation saw: group counts, grid gaps, partial coverage.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReaggregationReport {
    /// Distinct (fabric, window) groups produced.
    pub windows: usize,
    pub links_per_window_min: usize,
    pub links_per_window_max: usize,
    /// Grid slots between the first and last observed window, per fabric,
    /// with no in-scope records at all.
    pub gap_windows: usize,
    /// Link-windows whose sub-records cover less than the full window.
    pub partially_covered_links: usize,
}

struct LinkAccum {
    speed: f64,
    peer: String,
    src_block: String,
    dst_block: String,
    octets: u64,
    covered_s: i64,
}

/// Reaggregates sub-window port records onto the `target_window_s` grid and
/// derives the requested fabric-level metric kinds per window.
///
/// Octets are summed per link across sub-records, so counters are conserved
/// exactly; utilization is then total bits over the full target window's
/// capacity. Scope selects which links participate: fabric-wide uses links
/// leaving their block, block scope uses links inside the named block.
/// Port counters carry no traffic class, so the caller stamps the `qos`
/// the resulting series will join under.
pub fn reaggregate_nlm(
    records: &[PortRecord],
    target_window_s: i64,
    qos: QosClass,
    scope: &Scope,
    kinds: &[MetricKind],
) -> Result<(Vec<NlmPoint>, ReaggregationReport)> {
    if target_window_s <= 0 {
        return Err(Error::NonPositiveWindow(target_window_s));
    }
    if kinds.is_empty() {
        return Err(Error::Empty {
            what: "requested metric kinds",
        });
    }
    for &kind in kinds {
        if metrics::aggregate_stat(kind).is_none() {
            return Err(Error::UnsupportedMetric {
                context: "window reaggregation",
                kind: kind.to_string(),
            });
        }
    }
    if records.is_empty() {
        return Err(Error::Empty {
            what: "port records",
        });
    }

    let mut seen: HashSet<(&str, &str, i64)> = HashSet::new();
    let mut groups: BTreeMap<(String, i64), BTreeMap<String, LinkAccum>> = BTreeMap::new();
    for r in records {
        if r.window_len <= 0 {
            return Err(Error::NonPositiveWindow(r.window_len));
        }
        if !r.port_speed_bps.is_finite() || r.port_speed_bps <= 0.0 {
            return Err(Error::NonPositiveSpeed(r.port_speed_bps));
        }
        if !seen.insert((&r.fabric, &r.port_id, r.window_start)) {
            return Err(Error::DuplicateKey(format!(
                "port {} in fabric {} at window {}",
                r.port_id, r.fabric, r.window_start
            )));
        }
        let target = r.window_start.div_euclid(target_window_s) * target_window_s;
        if r.window_start + r.window_len > target + target_window_s {
            return Err(Error::WindowMisaligned {
                start: r.window_start,
                len: r.window_len,
                target: target_window_s,
            });
        }
        let in_scope = match scope {
            Scope::FabricWide => r.is_inter_block(),
            Scope::Block(b) => !r.is_inter_block() && r.src_block == *b,
        };
        if !in_scope {
            continue;
        }
        let accum = groups
            .entry((r.fabric.clone(), target))
            .or_default()
            .entry(r.port_id.clone())
            .or_insert_with(|| LinkAccum {
                speed: r.port_speed_bps,
                peer: r.peer_port_id.clone(),
                src_block: r.src_block.clone(),
                dst_block: r.dst_block.clone(),
                octets: 0,
                covered_s: 0,
            });
        if accum.speed != r.port_speed_bps {
            return Err(Error::MixedIdentities {
                detail: format!(
                    "port {} changes speed within window {} ({} vs {})",
                    r.port_id, target, accum.speed, r.port_speed_bps
                ),
            });
        }
        if accum.peer != r.peer_port_id {
            return Err(Error::MixedIdentities {
                detail: format!("port {} changes peer within window {}", r.port_id, target),
            });
        }
        accum.octets += r.outgoing_octets;
        accum.covered_s += r.window_len;
    }

    let mut report = ReaggregationReport {
        windows: groups.len(),
        links_per_window_min: usize::MAX,
        ..ReaggregationReport::default()
    };
    let mut per_fabric: BTreeMap<&str, (i64, i64, usize)> = BTreeMap::new();
    let mut points = Vec::new();
    for ((fabric, window_start), links) in &groups {
        report.links_per_window_min = report.links_per_window_min.min(links.len());
        report.links_per_window_max = report.links_per_window_max.max(links.len());
        per_fabric
            .entry(fabric)
            .and_modify(|(lo, hi, n)| {
                *lo = (*lo).min(*window_start);
                *hi = (*hi).max(*window_start);
                *n += 1;
            })
            .or_insert((*window_start, *window_start, 1));

        let mut link_utils = Vec::with_capacity(links.len());
        let mut adjacencies: BTreeMap<(&str, &str), Vec<(f64, f64)>> = BTreeMap::new();
        for accum in links.values() {
            if accum.covered_s < target_window_s {
                report.partially_covered_links += 1;
            }
            let util = metrics::link_utilization(accum.octets, target_window_s, accum.speed)?;
            link_utils.push(util);
            adjacencies
                .entry((&accum.src_block, &accum.dst_block))
                .or_default()
                .push((util, accum.speed));
        }
        let adjacency_utils: Vec<f64> = adjacencies
            .values()
            .map(|links| metrics::adjacency_utilization(links))
            .collect::<Result<_>>()?;

        for &kind in kinds {
            let stat = metrics::aggregate_stat(kind).expect("aggregate kinds checked above");
            let values = if kind.is_adjacency_based() {
                &adjacency_utils
            } else {
                &link_utils
            };
            points.push(NlmPoint {
                key: JoinKey {
                    fabric: fabric.clone(),
                    window_start: *window_start,
                    scope: scope.clone(),
                    qos,
                },
                kind,
                value: metrics::fabric_aggregate(values, stat)?,
            });
        }
    }
    if report.windows == 0 {
        report.links_per_window_min = 0;
    }
    for (lo, hi, n) in per_fabric.values() {
        let slots = ((hi - lo) / target_window_s) as usize + 1;
        report.gap_windows += slots - n;
    }
    Ok((points, report))
}

/// What a join matched and what it had to leave out.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct JoinReport {
    pub matched: usize,
    /// NLM windows with no AFM counterpart.
    pub nlm_only: usize,
    /// AFM windows with no NLM counterpart.
    pub afm_only: usize,
    /// AFM rows for other series (family, percentile, scope) than requested.
    pub skipped_afm_rows: usize,
}

enum YAccum {
    Scalar(f64),
    Sketch(QuantileSketch),
}

/// Inner-joins one NLM series against one AFM series on
/// (fabric, window, scope, qos).
///
/// Scalar AFM rows must report exactly the requested percentile; sketch
/// rows serve any percentile and duplicates for one key merge. The output
/// is sorted by join key, so it does not depend on input row order.
pub fn join_series(
    nlm: &[NlmPoint],
    afm: &[AfmRecord],
    nlm_kind: MetricKind,
    afm_kind: AfmKind,
) -> Result<(Vec<JoinedSample>, JoinReport)> {
    let mut report = JoinReport::default();

    let mut nlm_map: BTreeMap<&JoinKey, f64> = BTreeMap::new();
    for point in nlm.iter().filter(|p| p.kind == nlm_kind) {
        if nlm_map.insert(&point.key, point.value).is_some() {
            return Err(Error::DuplicateKey(format!("NLM series at {}", point.key)));
        }
    }

    let mut afm_map: BTreeMap<JoinKey, (i64, YAccum)> = BTreeMap::new();
    for record in afm {
        if record.family != afm_kind.family {
            report.skipped_afm_rows += 1;
            continue;
        }
        let Some(scope) = record.scope() else {
            report.skipped_afm_rows += 1;
            continue;
        };
        let key = JoinKey {
            fabric: record.fabric.clone(),
            window_start: record.window_start,
            scope,
            qos: record.qos,
        };
        match &record.payload {
            AfmPayload::Scalar { stat, value } => {
                if (stat - afm_kind.stat).abs() > 1e-9 {
                    report.skipped_afm_rows += 1;
                    continue;
                }
                if afm_map
                    .insert(key.clone(), (record.window_len, YAccum::Scalar(*value)))
                    .is_some()
                {
                    return Err(Error::DuplicateKey(format!("AFM series at {key}")));
                }
            }
            AfmPayload::Sketch(sketch) => match afm_map.entry(key) {
                std::collections::btree_map::Entry::Vacant(slot) => {
                    slot.insert((record.window_len, YAccum::Sketch(sketch.clone())));
                }
                std::collections::btree_map::Entry::Occupied(mut slot) => {
                    let key_text = slot.key().to_string();
                    let (len, accum) = slot.get_mut();
                    match accum {
                        YAccum::Sketch(existing) => {
                            if *len != record.window_len {
                                return Err(Error::MixedIdentities {
                                    detail: format!(
                                        "AFM sketches at {key_text} disagree on window length"
                                    ),
                                });
                            }
                            *existing = existing.merge(sketch)?;
                        }
                        YAccum::Scalar(_) => {
                            return Err(Error::DuplicateKey(format!("AFM series at {key_text}")));
                        }
                    }
                }
            },
        }
    }

    let mut samples = Vec::new();
    for (key, (window_len, accum)) in &afm_map {
        let Some(&nlm_value) = nlm_map.get(key) else {
            report.afm_only += 1;
            continue;
        };
        let afm_value = match accum {
            YAccum::Scalar(v) => *v,
            YAccum::Sketch(sketch) => sketch.quantile(afm_kind.stat_fraction())?,
        };
        samples.push(validate_sample(JoinedSample {
            fabric: key.fabric.clone(),
            window_start: key.window_start,
            window_len: *window_len,
            scope: key.scope.clone(),
            qos: key.qos,
            nlm_kind,
            nlm_value,
            afm_kind,
            afm_value,
        })?);
        report.matched += 1;
    }
    report.nlm_only = nlm_map.len() - report.matched;
    Ok((samples, report))
}
