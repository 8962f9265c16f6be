//! Interaction-record datasets and their aggregation tables.
//!
//! A dataset is a JSON array of interaction records (or a directory of
//! one-record files). Parsing collects every problem it finds instead of
//! stopping at the first, so an operator can fix a whole file in one pass.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::canonical;
use crate::error::ParseEnumError;
use crate::pipeline_id::PipelineId;
use crate::roles::{priority_of, ContextRole, SizeClass, SourceKind};
use crate::stage::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QualityOutcome {
    SuccessNoIteration,
    SuccessWithIteration,
    Partial,
    Failed,
}

impl QualityOutcome {
    pub fn label(self) -> &'static str {
        match self {
            QualityOutcome::SuccessNoIteration => "SUCCESS - no iteration",
            QualityOutcome::SuccessWithIteration => "SUCCESS - with iteration",
            QualityOutcome::Partial => "PARTIAL",
            QualityOutcome::Failed => "FAILED",
        }
    }

    pub fn is_success(self) -> bool {
        matches!(self, QualityOutcome::SuccessNoIteration | QualityOutcome::SuccessWithIteration)
    }
}

impl fmt::Display for QualityOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for QualityOutcome {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<String> = s
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_ascii_lowercase)
            .collect();
        let words: Vec<&str> = words.iter().map(String::as_str).collect();
        match words.as_slice() {
            ["success", "no", "iteration"]
            | ["success", "with", "no", "iteration"]
            | ["success", "without", "iteration"] => Ok(QualityOutcome::SuccessNoIteration),
            ["success", "with", "iteration"] => Ok(QualityOutcome::SuccessWithIteration),
            ["partial"] => Ok(QualityOutcome::Partial),
            ["failed"] => Ok(QualityOutcome::Failed),
            _ => Err(ParseEnumError::new("quality outcome", s)),
        }
    }
}

impl Serialize for QualityOutcome {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for QualityOutcome {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn overlaps(&self, other: &DateRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageRow {
    pub priority: u8,
    #[serde(with = "role_name")]
    pub role: ContextRole,
    #[serde(rename = "type")]
    pub source_kind: SourceKind,
    pub file_name: String,
    pub description: String,
}

/// Extraction records spell roles capitalized, as in "Authority".
mod role_name {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::roles::ContextRole;

    pub fn serialize<S: Serializer>(role: &ContextRole, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(role.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ContextRole, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionRecord {
    pub interaction_number: u32,
    pub date_range: DateRange,
    pub title: String,
    pub pipeline_id: PipelineId,
    pub tools_used: Vec<String>,
    pub stages_present: Vec<Stage>,
    pub context_package: Vec<PackageRow>,
    pub what_was_asked: String,
    pub what_was_produced: String,
    pub quality_outcome: QualityOutcome,
    pub evidence_fragments: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notable_patterns: Option<String>,
    /// Passes until the final outcome; 1 means accepted first time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u32>,
    /// Set on sprint-scale workflow chains coded by their final outcome.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_tokens: Option<u64>,
}

impl InteractionRecord {
    pub fn primary_tool(&self) -> &str {
        self.tools_used.first().map_or("", String::as_str)
    }

    /// Iteration count, and whether it is only a lower bound because the
    /// record did not state it.
    pub fn effective_iterations(&self) -> (u32, bool) {
        match (self.iterations, self.quality_outcome) {
            (Some(n), _) => (n, false),
            (None, QualityOutcome::SuccessNoIteration) => (1, false),
            (None, QualityOutcome::SuccessWithIteration) => (2, true),
            (None, _) => (1, true),
        }
    }

    pub fn is_chain(&self) -> bool {
        self.chain.unwrap_or(false)
    }
}

pub const REQUIRED_FIELDS: [&str; 11] = [
    "interaction_number",
    "date_range",
    "title",
    "pipeline_id",
    "tools_used",
    "stages_present",
    "context_package",
    "what_was_asked",
    "what_was_produced",
    "quality_outcome",
    "evidence_fragments",
];

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "code")]
pub enum DatasetError {
    #[error("MISSING_FIELD: record {record}: {field}")]
    #[serde(rename = "MISSING_FIELD")]
    MissingField { record: u32, field: String },
    #[error("BAD_OUTCOME: record {record}: '{value}' is not a quality outcome")]
    #[serde(rename = "BAD_OUTCOME")]
    BadOutcome { record: u32, value: String },
    #[error("INVALID_FIELD: record {record}: {detail}")]
    #[serde(rename = "INVALID_FIELD")]
    InvalidField { record: u32, detail: String },
    #[error("DUPLICATE_NUMBER: interaction number {record} appears more than once")]
    #[serde(rename = "DUPLICATE_NUMBER")]
    DuplicateNumber { record: u32 },
    #[error("DATASET_SYNTAX: {detail}")]
    #[serde(rename = "DATASET_SYNTAX")]
    Syntax { detail: String },
    #[error("EMPTY_INPUT: aggregation needs at least one record")]
    #[serde(rename = "EMPTY_INPUT")]
    EmptyInput,
}

impl DatasetError {
    pub fn code(&self) -> &'static str {
        match self {
            DatasetError::MissingField { .. } => "MISSING_FIELD",
            DatasetError::BadOutcome { .. } => "BAD_OUTCOME",
            DatasetError::InvalidField { .. } => "INVALID_FIELD",
            DatasetError::DuplicateNumber { .. } => "DUPLICATE_NUMBER",
            DatasetError::Syntax { .. } => "DATASET_SYNTAX",
            DatasetError::EmptyInput => "EMPTY_INPUT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetLint {
    pub code: String,
    pub records: Vec<u32>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<InteractionRecord>,
    pub lints: Vec<DatasetLint>,
}

fn lowercase_strings(v: &mut Value) {
    match v {
        Value::String(s) => *s = s.to_ascii_lowercase(),
        Value::Array(items) => items.iter_mut().for_each(lowercase_strings),
        _ => {}
    }
}

fn parse_object(index: usize, obj: Map<String, Value>, errors: &mut Vec<DatasetError>) -> Option<InteractionRecord> {
    let record = obj
        .get("interaction_number")
        .and_then(Value::as_u64)
        .and_then(|n| u32::try_from(n).ok())
        .unwrap_or(index as u32 + 1);
    let before = errors.len();

    for field in REQUIRED_FIELDS {
        let missing = match obj.get(field) {
            None | Some(Value::Null) => true,
            Some(Value::String(s)) => s.trim().is_empty(),
            Some(Value::Array(a)) => a.is_empty() && field != "context_package",
            _ => false,
        };
        if missing {
            errors.push(DatasetError::MissingField {
                record,
                field: field.to_string(),
            });
        }
    }
    if let Some(Value::Array(ev)) = obj.get("evidence_fragments") {
        if ev.len() == 1 {
            errors.push(DatasetError::MissingField {
                record,
                field: "evidence_fragments (at least two required)".to_string(),
            });
        } else if ev.len() > 4 {
            errors.push(DatasetError::InvalidField {
                record,
                detail: format!("evidence_fragments has {} entries; at most four allowed", ev.len()),
            });
        }
    }
    if let Some(outcome) = obj.get("quality_outcome") {
        let ok = outcome.as_str().is_some_and(|s| s.parse::<QualityOutcome>().is_ok());
        if !ok && !outcome.is_null() {
            errors.push(DatasetError::BadOutcome {
                record,
                value: outcome.as_str().map_or_else(|| outcome.to_string(), str::to_string),
            });
        }
    }
    if errors.len() > before {
        return None;
    }

    let mut obj = obj;
    if let Some(stages) = obj.get_mut("stages_present") {
        lowercase_strings(stages);
    }
    if let Some(Value::Array(rows)) = obj.get_mut("context_package") {
        for row in rows {
            if let Some(t) = row.get_mut("type") {
                lowercase_strings(t);
            }
        }
    }
    let parsed: InteractionRecord = match serde_json::from_value(Value::Object(obj)) {
        Ok(r) => r,
        Err(e) => {
            errors.push(DatasetError::InvalidField {
                record,
                detail: e.to_string(),
            });
            return None;
        }
    };
    if parsed.quality_outcome == QualityOutcome::SuccessNoIteration && parsed.iterations.is_some_and(|n| n != 1) {
        errors.push(DatasetError::InvalidField {
            record,
            detail: "a first-pass success has exactly one iteration".to_string(),
        });
        return None;
    }
    if parsed.iterations == Some(0) {
        errors.push(DatasetError::InvalidField {
            record,
            detail: "iterations must be at least 1".to_string(),
        });
        return None;
    }
    if parsed.date_range.end < parsed.date_range.start {
        errors.push(DatasetError::InvalidField {
            record,
            detail: "date_range ends before it starts".to_string(),
        });
        return None;
    }
    Some(parsed)
}

/// Parse records from already-decoded JSON values.
pub fn parse_values(values: Vec<Value>) -> Result<Dataset, Vec<DatasetError>> {
    let mut errors = Vec::new();
    let mut records = Vec::new();
    for (i, v) in values.into_iter().enumerate() {
        match v {
            Value::Object(obj) => {
                if let Some(r) = parse_object(i, obj, &mut errors) {
                    records.push(r);
                }
            }
            other => errors.push(DatasetError::Syntax {
                detail: format!("entry {} is not an object: {}", i + 1, other),
            }),
        }
    }
    let mut seen = BTreeMap::new();
    for r in &records {
        if seen.insert(r.interaction_number, ()).is_some() {
            errors.push(DatasetError::DuplicateNumber {
                record: r.interaction_number,
            });
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let lints = lint_records(&records);
    Ok(Dataset { records, lints })
}

/// Parse a dataset document: a JSON array of records or a single record.
pub fn parse_dataset(text: &str) -> Result<Dataset, Vec<DatasetError>> {
    let value: Value = serde_json::from_str(text).map_err(|e| vec![DatasetError::Syntax { detail: e.to_string() }])?;
    match value {
        Value::Array(items) => parse_values(items),
        obj @ Value::Object(_) => parse_values(vec![obj]),
        other => Err(vec![DatasetError::Syntax {
            detail: format!("expected an array of records, found {other}"),
        }]),
    }
}

/// Boundary and consistency lints over an otherwise valid record set.
pub fn lint_records(records: &[InteractionRecord]) -> Vec<DatasetLint> {
    let mut lints = Vec::new();
    for (i, a) in records.iter().enumerate() {
        for b in &records[i + 1..] {
            if a.pipeline_id == b.pipeline_id && a.title == b.title && a.date_range.overlaps(&b.date_range) {
                lints.push(DatasetLint {
                    code: "DUPLICATE_SUSPECT".to_string(),
                    records: vec![a.interaction_number, b.interaction_number],
                    message: format!(
                        "records {} and {} share pipeline {}, title and overlapping dates; a continuation in a new session is a separate interaction, the same conversation is not",
                        a.interaction_number, b.interaction_number, a.pipeline_id
                    ),
                });
            }
        }
        for row in &a.context_package {
            if row.priority != priority_of(row.role) {
                lints.push(DatasetLint {
                    code: "PRIORITY_ROLE_MISMATCH".to_string(),
                    records: vec![a.interaction_number],
                    message: format!(
                        "record {}: {} row '{}' lists priority {} instead of {}",
                        a.interaction_number,
                        row.role,
                        row.file_name,
                        row.priority,
                        priority_of(row.role)
                    ),
                });
            }
        }
    }
    lints
}

/// Canonical dataset document.
pub fn render_dataset(records: &[InteractionRecord]) -> String {
    canonical::to_canonical_pretty(records).expect("records serialize")
}

// ---------------------------------------------------------------------------
// Aggregation

/// `count / total` as a percentage rounded half-up to one decimal.
pub fn percent(count: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    ((count * 2000 + total) / (2 * total)) as f64 / 10.0
}

/// `sum / n` rounded half-up to one decimal.
pub fn mean_one_decimal(sum: u64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    ((sum * 20 + n) / (2 * n)) as f64 / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Tool,
    All,
}

impl FromStr for GroupBy {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tool" => Ok(GroupBy::Tool),
            "all" => Ok(GroupBy::All),
            _ => Err(ParseEnumError::new("grouping", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub group: String,
    pub total: u64,
    pub first_pass_count: u64,
    pub iterated_count: u64,
    pub partial_count: u64,
    pub failed_count: u64,
    pub final_success_count: u64,
    pub chain_count: u64,
    pub first_pass_pct: f64,
    pub iterated_pct: f64,
    pub partial_pct: f64,
    pub failed_pct: f64,
    pub final_success_pct: f64,
    pub avg_iterations: f64,
    pub avg_is_lower_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityTable {
    pub rows: Vec<QualityRow>,
}

impl QualityTable {
    pub fn row(&self, group: &str) -> Option<&QualityRow> {
        self.rows.iter().find(|r| r.group == group)
    }
}

fn quality_row(group: String, records: &[&InteractionRecord]) -> QualityRow {
    let count = |o: QualityOutcome| records.iter().filter(|r| r.quality_outcome == o).count() as u64;
    let total = records.len() as u64;
    let first = count(QualityOutcome::SuccessNoIteration);
    let iterated = count(QualityOutcome::SuccessWithIteration);
    let partial = count(QualityOutcome::Partial);
    let failed = count(QualityOutcome::Failed);
    let (iter_sum, lower_bound) = records.iter().fold((0u64, false), |(sum, lb), r| {
        let (n, is_lb) = r.effective_iterations();
        (sum + u64::from(n), lb || is_lb)
    });
    QualityRow {
        group,
        total,
        first_pass_count: first,
        iterated_count: iterated,
        partial_count: partial,
        failed_count: failed,
        final_success_count: first + iterated,
        chain_count: records.iter().filter(|r| r.is_chain()).count() as u64,
        first_pass_pct: percent(first, total),
        iterated_pct: percent(iterated, total),
        partial_pct: percent(partial, total),
        failed_pct: percent(failed, total),
        final_success_pct: percent(first + iterated, total),
        avg_iterations: mean_one_decimal(iter_sum, total),
        avg_is_lower_bound: lower_bound,
    }
}

/// Quality outcomes per group. Tool grouping uses each record's first listed
/// tool, in order of first appearance.
pub fn aggregate_quality(records: &[InteractionRecord], group_by: GroupBy) -> Result<QualityTable, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let rows = match group_by {
        GroupBy::All => vec![quality_row("all".to_string(), &records.iter().collect::<Vec<_>>())],
        GroupBy::Tool => {
            let mut order: Vec<&str> = Vec::new();
            for r in records {
                if !order.contains(&r.primary_tool()) {
                    order.push(r.primary_tool());
                }
            }
            order
                .into_iter()
                .map(|tool| {
                    let group: Vec<_> = records.iter().filter(|r| r.primary_tool() == tool).collect();
                    quality_row(tool.to_string(), &group)
                })
                .collect()
        }
    };
    Ok(QualityTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AuthorityType {
    FileBased,
    Verbal,
    Absent,
}

impl AuthorityType {
    pub const ALL: [AuthorityType; 3] = [AuthorityType::FileBased, AuthorityType::Verbal, AuthorityType::Absent];

    /// Strongest authority present: file rows beat verbal or memory rows.
    pub fn of(record: &InteractionRecord) -> Self {
        let authority = || record.context_package.iter().filter(|r| r.role == ContextRole::Authority);
        if authority().any(|r| r.source_kind == SourceKind::File) {
            AuthorityType::FileBased
        } else if authority().next().is_some() {
            AuthorityType::Verbal
        } else {
            AuthorityType::Absent
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AuthorityType::FileBased => "FileBased",
            AuthorityType::Verbal => "Verbal",
            AuthorityType::Absent => "Absent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorityRow {
    pub authority_type: AuthorityType,
    pub count: u64,
    pub first_pass_count: u64,
    pub first_pass_pct: Option<f64>,
}

pub fn authority_breakdown(records: &[InteractionRecord]) -> Vec<AuthorityRow> {
    AuthorityType::ALL
        .into_iter()
        .map(|t| {
            let group: Vec<_> = records.iter().filter(|r| AuthorityType::of(r) == t).collect();
            let count = group.len() as u64;
            let first = group
                .iter()
                .filter(|r| r.quality_outcome == QualityOutcome::SuccessNoIteration)
                .count() as u64;
            AuthorityRow {
                authority_type: t,
                count,
                first_pass_count: first,
                first_pass_pct: (count > 0).then(|| percent(first, count)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub size_class: SizeClass,
    pub count: u64,
    pub avg_iterations: f64,
    pub first_pass_count: u64,
    pub first_pass_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeTable {
    pub rows: Vec<SizeRow>,
    /// Records the token lookup had no figure for.
    pub unclassified: u64,
}

/// Outcomes by context package size. Classes with no records are omitted.
pub fn size_breakdown<F>(records: &[InteractionRecord], token_lookup: F) -> SizeTable
where
    F: Fn(&InteractionRecord) -> Option<u64>,
{
    let mut buckets: BTreeMap<SizeClass, Vec<&InteractionRecord>> = BTreeMap::new();
    let mut unclassified = 0;
    for r in records {
        match token_lookup(r) {
            Some(t) => buckets.entry(SizeClass::from_tokens(t)).or_default().push(r),
            None => unclassified += 1,
        }
    }
    let rows = buckets
        .into_iter()
        .map(|(class, group)| {
            let count = group.len() as u64;
            let first = group
                .iter()
                .filter(|r| r.quality_outcome == QualityOutcome::SuccessNoIteration)
                .count() as u64;
            let iters: u64 = group.iter().map(|r| u64::from(r.effective_iterations().0)).sum();
            SizeRow {
                size_class: class,
                count,
                avg_iterations: mean_one_decimal(iters, count),
                first_pass_count: first,
                first_pass_pct: percent(first, count),
            }
        })
        .collect();
    SizeTable { rows, unclassified }
}

/// Share of records in which each stage is present. Shares can sum past 100.
pub fn stage_presence(records: &[InteractionRecord]) -> Result<BTreeMap<Stage, f64>, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let total = records.len() as u64;
    Ok(Stage::ALL
        .into_iter()
        .map(|s| {
            let n = records.iter().filter(|r| r.stages_present.contains(&s)).count() as u64;
            (s, percent(n, total))
        })
        .collect())
}
