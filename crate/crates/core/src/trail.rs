//! Append-only, hash-chained event log for one pipeline.
//!
//! The log is line-delimited: one canonical compact JSON object per line.
//! Each event's digest is SHA-256 over the canonical encoding of every other
//! field, including the previous event's digest; the first event chains from
//! 32 zero bytes.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::to_canonical_compact;
use crate::pipeline::{EventKind, PipelineEvent};
use crate::pipeline_id::PipelineId;
use crate::stage::Stage;

pub const GENESIS_DIGEST: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Error)]
pub enum TrailError {
    #[error("TRAIL_IO: {0}")]
    Io(#[from] std::io::Error),
    #[error("TRAIL_BROKEN: chain breaks at seq {at_seq}: {reason}")]
    Broken { at_seq: u64, reason: String },
    #[error("TRAIL_PAYLOAD: event {seq} does not decode: {reason}")]
    Payload { seq: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrailEvent {
    pub seq: u64,
    pub timestamp: String,
    pub pipeline_id: PipelineId,
    pub kind: EventKind,
    pub payload: Value,
    pub prev_digest: String,
    pub digest: String,
}

#[derive(Serialize)]
struct DigestInput<'a> {
    seq: u64,
    timestamp: &'a str,
    pipeline_id: &'a PipelineId,
    kind: EventKind,
    payload: &'a Value,
    prev_digest: &'a str,
}

fn compute_digest(input: &DigestInput<'_>) -> String {
    let bytes = to_canonical_compact(input).expect("digest input serializes");
    hex::encode(Sha256::digest(bytes.as_bytes()))
}

pub fn now_timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl TrailEvent {
    /// Seal an engine event onto the end of a chain.
    pub fn seal(
        prev: Option<&TrailEvent>,
        pipeline_id: &PipelineId,
        event: &PipelineEvent,
        timestamp: String,
    ) -> TrailEvent {
        let mut tagged = serde_json::to_value(event).expect("event serializes");
        let payload = tagged
            .get_mut("payload")
            .map(Value::take)
            .unwrap_or(Value::Null);
        let seq = prev.map_or(1, |p| p.seq + 1);
        let prev_digest = prev.map_or_else(|| GENESIS_DIGEST.to_string(), |p| p.digest.clone());
        let digest = compute_digest(&DigestInput {
            seq,
            timestamp: &timestamp,
            pipeline_id,
            kind: event.kind(),
            payload: &payload,
            prev_digest: &prev_digest,
        });
        TrailEvent {
            seq,
            timestamp,
            pipeline_id: pipeline_id.clone(),
            kind: event.kind(),
            payload,
            prev_digest,
            digest,
        }
    }

    pub fn expected_digest(&self) -> String {
        compute_digest(&DigestInput {
            seq: self.seq,
            timestamp: &self.timestamp,
            pipeline_id: &self.pipeline_id,
            kind: self.kind,
            payload: &self.payload,
            prev_digest: &self.prev_digest,
        })
    }

    /// Decode back into the engine event it records.
    pub fn to_event(&self) -> Result<PipelineEvent, TrailError> {
        serde_json::from_value(json!({ "kind": self.kind, "payload": self.payload })).map_err(|e| {
            TrailError::Payload {
                seq: self.seq,
                reason: e.to_string(),
            }
        })
    }

    pub fn to_line(&self) -> String {
        to_canonical_compact(self).expect("trail event serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum Verification {
    Ok { events: u64 },
    Broken { at_seq: u64, reason: String },
}

impl Verification {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verification::Ok { .. })
    }
}

/// Parse and verify raw trail bytes, stopping at the first bad line.
pub fn parse_trail(bytes: &[u8]) -> Result<Vec<TrailEvent>, TrailError> {
    let mut events: Vec<TrailEvent> = Vec::new();
    if bytes.is_empty() {
        return Ok(events);
    }
    let mut lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
    // a well-formed file ends with a newline, leaving one empty tail segment
    let tail = lines.pop().unwrap_or_default();
    let broken = |at_seq: u64, reason: String| TrailError::Broken { at_seq, reason };
    for (idx, line) in lines.iter().enumerate() {
        let at_seq = idx as u64 + 1;
        let ev: TrailEvent = serde_json::from_slice(line)
            .map_err(|e| broken(at_seq, format!("unreadable line: {e}")))?;
        if ev.seq != at_seq {
            return Err(broken(at_seq, format!("sequence gap: line {at_seq} carries seq {}", ev.seq)));
        }
        let expected_prev = events.last().map_or(GENESIS_DIGEST, |p| p.digest.as_str());
        if ev.prev_digest != expected_prev {
            return Err(broken(at_seq, "previous digest does not match".into()));
        }
        if let Some(first) = events.first() {
            if first.pipeline_id != ev.pipeline_id {
                return Err(broken(at_seq, "pipeline id changes mid-trail".into()));
            }
        }
        if ev.digest != ev.expected_digest() {
            return Err(broken(at_seq, "digest mismatch".into()));
        }
        if ev.to_line().as_bytes() != *line {
            return Err(broken(at_seq, "line is not in canonical form".into()));
        }
        events.push(ev);
    }
    if !tail.is_empty() {
        return Err(broken(
            lines.len() as u64 + 1,
            "unterminated final line".into(),
        ));
    }
    Ok(events)
}

/// Recompute the digest chain over raw trail bytes.
pub fn verify_bytes(bytes: &[u8]) -> Verification {
    match parse_trail(bytes) {
        Ok(events) => Verification::Ok {
            events: events.len() as u64,
        },
        Err(TrailError::Broken { at_seq, reason }) => Verification::Broken { at_seq, reason },
        Err(e) => Verification::Broken {
            at_seq: 0,
            reason: e.to_string(),
        },
    }
}

/// Engine events recorded in a verified trail, in order.
pub fn decode_events(events: &[TrailEvent]) -> Result<Vec<PipelineEvent>, TrailError> {
    events.iter().map(TrailEvent::to_event).collect()
}

fn str_field<'a>(v: &'a Value, path: &[&str]) -> &'a str {
    let mut cur = v;
    for p in path {
        match cur.get(p) {
            Some(next) => cur = next,
            None => return "-",
        }
    }
    cur.as_str().unwrap_or("-")
}

fn stage_name(v: &Value, path: &[&str]) -> String {
    let raw = str_field(v, path);
    raw.parse::<Stage>().map_or_else(|_| raw.to_string(), |s| s.name().to_string())
}

fn describe(ev: &TrailEvent) -> String {
    let p = &ev.payload;
    match ev.kind {
        EventKind::PipelineCreated => format!(
            "pipeline {} created at {} scale",
            str_field(p, &["pipeline_id"]),
            str_field(p, &["scale"])
        ),
        EventKind::PackageAttached => format!(
            "package {} attached for {} ({} elements)",
            str_field(p, &["package", "package_id"]),
            stage_name(p, &["package", "stage"]),
            p.pointer("/package/elements").and_then(Value::as_array).map_or(0, Vec::len)
        ),
        EventKind::StageBegun => format!(
            "{} {} begun on branch {} by {} with package {}",
            stage_name(p, &["record", "stage"]),
            str_field(p, &["record", "record_id"]),
            str_field(p, &["record", "branch_id"]),
            str_field(p, &["record", "tool", "name"]),
            str_field(p, &["record", "package_id"])
        ),
        EventKind::StageCompleted => {
            let mut s = format!(
                "{} completed with output {}",
                str_field(p, &["record_id"]),
                str_field(p, &["output_artifact"])
            );
            if let Some(pattern) = p.get("cross_tool_pattern").and_then(Value::as_str) {
                let _ = write!(s, " (cross-tool pattern {pattern})");
            }
            s
        }
        EventKind::StageWaived => format!(
            "{} {} waived on branch {}: {}",
            stage_name(p, &["record", "stage"]),
            str_field(p, &["record", "record_id"]),
            str_field(p, &["record", "branch_id"]),
            str_field(p, &["record", "waiver_reason"])
        ),
        EventKind::FindingRecorded => {
            let category = str_field(p, &["finding", "category"]);
            let route = category
                .parse::<crate::pipeline::FindingCategory>()
                .map(|c| crate::pipeline::route_for(c).name().to_string())
                .unwrap_or_else(|_| "-".to_string());
            format!(
                "finding {} severity {} category {} route {} (auditor {}, branch {}): {}",
                str_field(p, &["finding", "finding_id"]),
                str_field(p, &["finding", "severity"]),
                category,
                route,
                str_field(p, &["auditor_record_id"]),
                str_field(p, &["branch_id"]),
                str_field(p, &["finding", "description"])
            )
        }
        EventKind::IterationRouted => format!(
            "finding {} routed to {} record {} ({})",
            str_field(p, &["finding_id"]),
            stage_name(p, &["target_stage"]),
            str_field(p, &["record_id"]),
            if p.get("opened").is_some_and(|o| !o.is_null()) {
                "reopened"
            } else {
                "joined open record"
            }
        ),
        EventKind::BranchCreated => format!(
            "branch {} created from {} on design {}",
            str_field(p, &["branch_id"]),
            str_field(p, &["parent"]),
            str_field(p, &["design_record_id"])
        ),
        EventKind::PipelineClosed => {
            let codes: Vec<&str> = p
                .get("warnings")
                .and_then(Value::as_array)
                .map(|w| w.iter().filter_map(|n| n.get("code").and_then(Value::as_str)).collect())
                .unwrap_or_default();
            if codes.is_empty() {
                "pipeline closed cleanly".to_string()
            } else {
                format!("pipeline closed with warnings: {}", codes.join(", "))
            }
        }
    }
}

/// Human-readable chronological rendering, one entry per event.
pub fn render_trail(pipeline_id: &PipelineId, events: &[TrailEvent]) -> String {
    let title = format!("Audit trail: {pipeline_id}");
    let mut out = format!("{title}\n{}\n", "=".repeat(title.len()));
    for ev in events {
        let _ = writeln!(
            out,
            "{:>4}  {}  {:<16} {}",
            ev.seq,
            ev.timestamp,
            ev.kind.name(),
            describe(ev)
        );
    }
    out
}

/// The on-disk trail for one pipeline.
#[derive(Debug, Clone)]
pub struct TrailFile {
    path: PathBuf,
}

impl TrailFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn read_bytes(&self) -> Result<Vec<u8>, TrailError> {
        match fs::read(&self.path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn read(&self) -> Result<Vec<TrailEvent>, TrailError> {
        parse_trail(&self.read_bytes()?)
    }

    pub fn verify(&self) -> Result<Verification, TrailError> {
        Ok(verify_bytes(&self.read_bytes()?))
    }

    /// Seal and durably append engine events after `last`.
    pub fn append(
        &self,
        last: Option<&TrailEvent>,
        pipeline_id: &PipelineId,
        events: &[PipelineEvent],
    ) -> Result<Vec<TrailEvent>, TrailError> {
        let mut sealed: Vec<TrailEvent> = Vec::with_capacity(events.len());
        let mut buf = String::new();
        for e in events {
            let prev = sealed.last().or(last);
            let ev = TrailEvent::seal(prev, pipeline_id, e, now_timestamp());
            buf.push_str(&ev.to_line());
            buf.push('\n');
            sealed.push(ev);
        }
        if buf.is_empty() {
            return Ok(sealed);
        }
        let mut f: File = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(buf.as_bytes())?;
        f.sync_data()?;
        Ok(sealed)
    }
}
