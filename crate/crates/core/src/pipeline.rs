//! The four-stage pipeline state machine.
//!
//! A [`Pipeline`] is only ever changed by applying [`PipelineEvent`]s. Each
//! operation checks the stage-gating rules against the current state, emits
//! the events describing the change, and applies them through
//! [`Pipeline::apply`]. Folding a pipeline's event history through the same
//! reducer reproduces its state exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ParseEnumError;
use crate::pipeline_id::{PipelineId, PipelineIdError};
use crate::roles::{check_package, ContextPackage, Severity};
use crate::stage::Stage;

pub const MAIN_BRANCH: &str = "main";

pub const RULE1: &str = "Each stage's output is a required input to the next stage";
pub const RULE2: &str = "The design output is the authority document for the builder and the auditor";
pub const RULE5: &str = "Parallel branches are valid, each with its own builder and auditor";
pub const RULE6: &str = "The executor cannot be the auditor";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Task,
    Sprint,
}

impl FromStr for Scale {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "task" => Ok(Scale::Task),
            "sprint" => Ok(Scale::Sprint),
            _ => Err(ParseEnumError::new("scale", s)),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Task => "task",
            Scale::Sprint => "sprint",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineStatus {
    Active,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolType {
    GeneralistLlm,
    SpecializedAgent,
    CodeGenerator,
    ClassificationSystem,
}

impl FromStr for ToolType {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "generalistllm" | "generalist" | "llm" => Ok(ToolType::GeneralistLlm),
            "specializedagent" | "agent" => Ok(ToolType::SpecializedAgent),
            "codegenerator" | "code" => Ok(ToolType::CodeGenerator),
            "classificationsystem" | "classifier" => Ok(ToolType::ClassificationSystem),
            _ => Err(ParseEnumError::new("tool type", s)),
        }
    }
}

impl ToolType {
    /// How each kind of tool receives its context.
    pub fn default_mechanism(self) -> &'static str {
        match self {
            ToolType::GeneralistLlm => "in-context learning via prompt",
            ToolType::SpecializedAgent => "environment context + task specification",
            ToolType::CodeGenerator => "repository state + specification",
            ToolType::ClassificationSystem => "feature extraction + labeled examples",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub tool_type: ToolType,
    pub context_mechanism: String,
}

impl ToolDescriptor {
    pub fn new(name: impl Into<String>, tool_type: ToolType) -> Self {
        Self {
            name: name.into(),
            tool_type,
            context_mechanism: tool_type.default_mechanism().to_string(),
        }
    }

    fn same_tool(&self, other: &ToolDescriptor) -> bool {
        self.name.trim().eq_ignore_ascii_case(other.name.trim())
    }

    fn vendor(&self) -> String {
        self.name
            .split(|c: char| c.is_whitespace() || c == '-' || c == '/')
            .find(|s| !s.is_empty())
            .unwrap_or("")
            .to_ascii_lowercase()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Open,
    Complete,
    Waived,
}

impl RecordStatus {
    pub fn is_settled(self) -> bool {
        matches!(self, RecordStatus::Complete | RecordStatus::Waived)
    }
}

/// Operator-entered classification of how two tools' outputs compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CrossToolPattern {
    ToolDisagreement,
    OneToolSilent,
    BothAgree,
    PartialOverlap,
    TimeDecay,
}

impl FromStr for CrossToolPattern {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "tooldisagreement" => Ok(Self::ToolDisagreement),
            "onetoolsilent" => Ok(Self::OneToolSilent),
            "bothagree" => Ok(Self::BothAgree),
            "partialoverlap" => Ok(Self::PartialOverlap),
            "timedecay" => Ok(Self::TimeDecay),
            _ => Err(ParseEnumError::new("cross-tool pattern", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub record_id: String,
    pub stage: Stage,
    pub branch_id: String,
    pub tool: Option<ToolDescriptor>,
    pub package_id: Option<String>,
    pub output_artifact: Option<String>,
    pub status: RecordStatus,
    pub waiver_reason: Option<String>,
    /// Findings that reopened this stage, if it was created by an iteration.
    #[serde(default)]
    pub findings: Vec<String>,
    #[serde(default)]
    pub cross_tool_pattern: Option<CrossToolPattern>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FindingSeverity {
    Critical,
    Major,
    Minor,
}

impl FromStr for FindingSeverity {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "critical" => Ok(Self::Critical),
            "major" => Ok(Self::Major),
            "minor" => Ok(Self::Minor),
            _ => Err(ParseEnumError::new("severity", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FindingCategory {
    ExecutionError,
    Structural,
    MissingContext,
}

impl FromStr for FindingCategory {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "executionerror" | "execution" => Ok(Self::ExecutionError),
            "structural" => Ok(Self::Structural),
            "missingcontext" => Ok(Self::MissingContext),
            _ => Err(ParseEnumError::new("finding category", s)),
        }
    }
}

/// Target stage for an auditor finding. Keyed on category only.
pub fn route_for(category: FindingCategory) -> Stage {
    match category {
        FindingCategory::ExecutionError => Stage::Builder,
        FindingCategory::Structural => Stage::Design,
        FindingCategory::MissingContext => Stage::Reviewer,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub finding_id: String,
    pub severity: FindingSeverity,
    pub category: FindingCategory,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedFinding {
    pub finding: AuditFinding,
    pub branch_id: String,
    pub auditor_record_id: String,
    pub target_stage: Stage,
    pub routed_record_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRoute {
    pub finding_id: String,
    pub target_stage: Stage,
    pub record_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub branch_id: String,
    pub parent: Option<String>,
    /// Reviewer/Design records this branch inherits from its parent.
    pub inherited: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notice {
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

impl Notice {
    fn warning(code: &str, message: String) -> Self {
        Self {
            severity: Severity::Warning,
            code: code.to_string(),
            message,
        }
    }

    fn info(code: &str, message: String) -> Self {
        Self {
            severity: Severity::Info,
            code: code.to_string(),
            message,
        }
    }
}

/// Predicted consequence of running without a stage.
pub fn skip_failure_mode(stage: Stage) -> Option<&'static str> {
    match stage {
        Stage::Reviewer => Some(
            "the builder lacks verified requirements, so output is likely to be generic or misaligned",
        ),
        Stage::Design => Some(
            "the builder lacks architecture, so expect structurally incoherent output",
        ),
        Stage::Auditor => Some(
            "errors propagate without detection, so expect accumulated defects",
        ),
        Stage::Builder => None,
    }
}

// ---------------------------------------------------------------------------
// Events

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum PipelineEvent {
    PipelineCreated {
        pipeline_id: PipelineId,
        scale: Scale,
    },
    PackageAttached {
        package: ContextPackage,
    },
    StageBegun {
        record: StageRecord,
    },
    StageCompleted {
        record_id: String,
        output_artifact: String,
        #[serde(default)]
        cross_tool_pattern: Option<CrossToolPattern>,
    },
    StageWaived {
        record: StageRecord,
    },
    FindingRecorded {
        branch_id: String,
        auditor_record_id: String,
        finding: AuditFinding,
    },
    IterationRouted {
        finding_id: String,
        branch_id: String,
        target_stage: Stage,
        record_id: String,
        /// Present when routing opened a new record; absent when the finding
        /// joined a record that was already open.
        opened: Option<StageRecord>,
    },
    BranchCreated {
        branch_id: String,
        parent: String,
        design_record_id: String,
        inherited: Vec<String>,
    },
    PipelineClosed {
        warnings: Vec<Notice>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    PipelineCreated,
    StageBegun,
    StageCompleted,
    StageWaived,
    FindingRecorded,
    IterationRouted,
    BranchCreated,
    PipelineClosed,
    PackageAttached,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::PipelineCreated => "PipelineCreated",
            EventKind::StageBegun => "StageBegun",
            EventKind::StageCompleted => "StageCompleted",
            EventKind::StageWaived => "StageWaived",
            EventKind::FindingRecorded => "FindingRecorded",
            EventKind::IterationRouted => "IterationRouted",
            EventKind::BranchCreated => "BranchCreated",
            EventKind::PipelineClosed => "PipelineClosed",
            EventKind::PackageAttached => "PackageAttached",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PipelineEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            PipelineEvent::PipelineCreated { .. } => EventKind::PipelineCreated,
            PipelineEvent::PackageAttached { .. } => EventKind::PackageAttached,
            PipelineEvent::StageBegun { .. } => EventKind::StageBegun,
            PipelineEvent::StageCompleted { .. } => EventKind::StageCompleted,
            PipelineEvent::StageWaived { .. } => EventKind::StageWaived,
            PipelineEvent::FindingRecorded { .. } => EventKind::FindingRecorded,
            PipelineEvent::IterationRouted { .. } => EventKind::IterationRouted,
            PipelineEvent::BranchCreated { .. } => EventKind::BranchCreated,
            PipelineEvent::PipelineClosed { .. } => EventKind::PipelineClosed,
        }
    }
}

// ---------------------------------------------------------------------------
// Errors

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("RULE1_VIOLATION: {RULE1} ({stage} on branch '{branch}' requires {missing} to be Complete or Waived)")]
    Rule1 { stage: Stage, missing: Stage, branch: String },
    #[error("RULE2_VIOLATION: {RULE2} ({stage} package '{package_id}' has no Authority element tagged design_authority and Design was not waived)")]
    Rule2 { stage: Stage, package_id: String },
    #[error("RULE6_VIOLATION: {RULE6} (auditor tool '{tool}' also built branch '{branch}')")]
    Rule6 { tool: String, branch: String },
    #[error("PIPELINE_CLOSED: pipeline {0} is closed and rejects all mutations")]
    Closed(PipelineId),
    #[error("NOT_SKIPPABLE: the Builder stage cannot be waived; a pipeline without a builder produces nothing")]
    NotSkippable,
    #[error("NO_AUDITOR: branch '{0}' has no open or complete Auditor record")]
    NoAuditor(String),
    #[error("INCOMPLETE_BUILD: branch '{0}' has no Complete Builder record")]
    IncompleteBuild(String),
    #[error("UNKNOWN_RECORD: no stage record '{0}'")]
    UnknownRecord(String),
    #[error("UNKNOWN_BRANCH: no branch '{0}'")]
    UnknownBranch(String),
    #[error("UNKNOWN_PACKAGE: no package '{0}' attached to this pipeline")]
    UnknownPackage(String),
    #[error("STAGE_MISMATCH: package '{package_id}' targets {package_stage}, not {stage}")]
    StageMismatch { package_id: String, package_stage: Stage, stage: Stage },
    #[error("INVALID_STATE: {0}")]
    InvalidState(String),
    #[error("DUPLICATE_BRANCH: branch '{0}' already exists or is listed twice")]
    DuplicateBranch(String),
    #[error("DESIGN_NOT_COMPLETE: record '{0}' is not a Complete Design record")]
    DesignNotComplete(String),
    #[error("PACKAGE_CONFLICT: a different package '{0}' is already attached")]
    PackageConflict(String),
    #[error("VALIDATION_ERROR: {0}")]
    Validation(String),
    #[error("REPLAY_ERROR: {0}")]
    Replay(String),
}

impl From<PipelineIdError> for EngineError {
    fn from(e: PipelineIdError) -> Self {
        EngineError::Validation(e.to_string())
    }
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Rule1 { .. } => "RULE1_VIOLATION",
            EngineError::Rule2 { .. } => "RULE2_VIOLATION",
            EngineError::Rule6 { .. } => "RULE6_VIOLATION",
            EngineError::Closed(_) => "PIPELINE_CLOSED",
            EngineError::NotSkippable => "NOT_SKIPPABLE",
            EngineError::NoAuditor(_) => "NO_AUDITOR",
            EngineError::IncompleteBuild(_) => "INCOMPLETE_BUILD",
            EngineError::UnknownRecord(_) => "UNKNOWN_RECORD",
            EngineError::UnknownBranch(_) => "UNKNOWN_BRANCH",
            EngineError::UnknownPackage(_) => "UNKNOWN_PACKAGE",
            EngineError::StageMismatch { .. } => "STAGE_MISMATCH",
            EngineError::InvalidState(_) => "INVALID_STATE",
            EngineError::DuplicateBranch(_) => "DUPLICATE_BRANCH",
            EngineError::DesignNotComplete(_) => "DESIGN_NOT_COMPLETE",
            EngineError::PackageConflict(_) => "PACKAGE_CONFLICT",
            EngineError::Validation(_) => "VALIDATION_ERROR",
            EngineError::Replay(_) => "REPLAY_ERROR",
        }
    }

    /// The pipeline rule an error enforces, when there is one.
    pub fn rule(&self) -> Option<&'static str> {
        match self {
            EngineError::Rule1 { .. } | EngineError::IncompleteBuild(_) => Some("Rule 1"),
            EngineError::Rule2 { .. } => Some("Rule 2"),
            EngineError::NoAuditor(_) => Some("Rule 3"),
            EngineError::DuplicateBranch(_) | EngineError::DesignNotComplete(_) => Some("Rule 5"),
            EngineError::Rule6 { .. } => Some("Rule 6"),
            _ => None,
        }
    }

    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            EngineError::UnknownRecord(_) | EngineError::UnknownBranch(_) | EngineError::UnknownPackage(_)
        )
    }
}

/// Result of an operation: its return value, the events it applied, and any
/// warnings to surface to the operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub value: T,
    pub events: Vec<PipelineEvent>,
    pub notices: Vec<Notice>,
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pipeline {
    pub id: PipelineId,
    pub scale: Scale,
    pub status: PipelineStatus,
    pub records: Vec<StageRecord>,
    pub branches: BTreeMap<String, Branch>,
    pub packages: BTreeMap<String, ContextPackage>,
    pub findings: Vec<RecordedFinding>,
    /// Number of events applied so far.
    pub revision: u64,
}

fn require_nonempty(field: &str, value: &str) -> Result<(), EngineError> {
    if value.trim().is_empty() {
        return Err(EngineError::Validation(format!("{field} must not be empty")));
    }
    Ok(())
}

impl Pipeline {
    /// Start a pipeline. The returned transition carries the creating event.
    pub fn create(project: &str, domain: &str, scale: Scale) -> Result<Transition<Pipeline>, EngineError> {
        let id = PipelineId::new(project, domain)?;
        let event = PipelineEvent::PipelineCreated { pipeline_id: id, scale };
        let pipeline = Pipeline::replay([&event])?;
        Ok(Transition {
            value: pipeline,
            events: vec![event],
            notices: Vec::new(),
        })
    }

    /// Rebuild a pipeline from its full event history.
    pub fn replay<'a, I>(events: I) -> Result<Pipeline, EngineError>
    where
        I: IntoIterator<Item = &'a PipelineEvent>,
    {
        let mut iter = events.into_iter();
        let mut pipeline = match iter.next() {
            Some(PipelineEvent::PipelineCreated { pipeline_id, scale }) => Pipeline {
                id: pipeline_id.clone(),
                scale: *scale,
                status: PipelineStatus::Active,
                records: Vec::new(),
                branches: BTreeMap::from([(
                    MAIN_BRANCH.to_string(),
                    Branch {
                        branch_id: MAIN_BRANCH.to_string(),
                        parent: None,
                        inherited: Vec::new(),
                    },
                )]),
                packages: BTreeMap::new(),
                findings: Vec::new(),
                revision: 1,
            },
            Some(other) => {
                return Err(EngineError::Replay(format!(
                    "history must start with PipelineCreated, found {}",
                    other.kind()
                )))
            }
            None => return Err(EngineError::Replay("empty history".into())),
        };
        for event in iter {
            pipeline.apply(event)?;
        }
        Ok(pipeline)
    }

    pub fn is_closed(&self) -> bool {
        self.status == PipelineStatus::Closed
    }

    pub fn record(&self, record_id: &str) -> Option<&StageRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    fn record_mut(&mut self, record_id: &str) -> Option<&mut StageRecord> {
        self.records.iter_mut().find(|r| r.record_id == record_id)
    }

    fn own_latest(&self, branch: &str, stage: Stage) -> Option<&StageRecord> {
        self.records
            .iter()
            .rev()
            .find(|r| r.branch_id == branch && r.stage == stage)
    }

    /// Latest record for a stage on a branch, falling back to the records the
    /// branch inherited from its parent.
    pub fn latest(&self, branch: &str, stage: Stage) -> Option<&StageRecord> {
        self.own_latest(branch, stage).or_else(|| {
            let b = self.branches.get(branch)?;
            b.inherited
                .iter()
                .filter_map(|id| self.record(id))
                .find(|r| r.stage == stage)
        })
    }

    fn open_record(&self, branch: &str, stage: Stage) -> Option<&StageRecord> {
        self.records
            .iter()
            .find(|r| r.branch_id == branch && r.stage == stage && r.status == RecordStatus::Open)
    }

    fn has_children(&self, branch: &str) -> bool {
        self.branches
            .values()
            .any(|b| b.parent.as_deref() == Some(branch))
    }

    /// Branches that must produce their own build before the pipeline closes.
    /// A trunk that only fanned out into child branches is exempt.
    pub fn building_branches(&self) -> Vec<&str> {
        self.branches
            .keys()
            .filter(|b| self.own_latest(b, Stage::Builder).is_some() || !self.has_children(b))
            .map(String::as_str)
            .collect()
    }

    fn next_record_id(&self) -> String {
        format!("R-{}", self.records.len() + 1)
    }

    /// Next free auto-assigned finding id.
    pub fn next_finding_id(&self) -> String {
        let mut n = self.findings.len() + 1;
        loop {
            let id = format!("F-{n}");
            if !self.findings.iter().any(|f| f.finding.finding_id == id) {
                return id;
            }
            n += 1;
        }
    }

    fn ensure_active(&self) -> Result<(), EngineError> {
        if self.is_closed() {
            return Err(EngineError::Closed(self.id.clone()));
        }
        Ok(())
    }

    fn ensure_branch(&self, branch: &str) -> Result<(), EngineError> {
        if !self.branches.contains_key(branch) {
            return Err(EngineError::UnknownBranch(branch.to_string()));
        }
        Ok(())
    }

    fn commit<T>(&mut self, value: T, events: Vec<PipelineEvent>, notices: Vec<Notice>) -> Result<Transition<T>, EngineError> {
        for e in &events {
            self.apply(e)?;
        }
        Ok(Transition { value, events, notices })
    }

    /// Attach a context package so stages can reference it. Re-attaching an
    /// identical package is a no-op and emits nothing.
    pub fn attach_package(&mut self, package: ContextPackage) -> Result<Transition<bool>, EngineError> {
        self.ensure_active()?;
        if package.pipeline_id != self.id {
            return Err(EngineError::Validation(format!(
                "package '{}' belongs to {}, not {}",
                package.package_id, package.pipeline_id, self.id
            )));
        }
        require_nonempty("package_id", &package.package_id)?;
        check_package(&package).map_err(|e| EngineError::Validation(e.to_string()))?;
        if let Some(existing) = self.packages.get(&package.package_id) {
            if *existing == package {
                return Ok(Transition { value: false, events: Vec::new(), notices: Vec::new() });
            }
            return Err(EngineError::PackageConflict(package.package_id));
        }
        self.commit(true, vec![PipelineEvent::PackageAttached { package }], Vec::new())
    }

    /// Open a stage on a branch, enforcing Rules 1, 2 and 6.
    pub fn begin_stage(
        &mut self,
        stage: Stage,
        tool: ToolDescriptor,
        package_id: &str,
        branch: &str,
    ) -> Result<Transition<StageRecord>, EngineError> {
        self.ensure_active()?;
        self.ensure_branch(branch)?;
        require_nonempty("tool name", &tool.name)?;
        let pkg = self
            .packages
            .get(package_id)
            .ok_or_else(|| EngineError::UnknownPackage(package_id.to_string()))?;
        if pkg.stage != stage {
            return Err(EngineError::StageMismatch {
                package_id: package_id.to_string(),
                package_stage: pkg.stage,
                stage,
            });
        }
        if let Some(open) = self.open_record(branch, stage) {
            return Err(EngineError::InvalidState(format!(
                "{stage} already has open record {} on branch '{branch}'",
                open.record_id
            )));
        }

        for &prior in stage.predecessors() {
            let settled = self.latest(branch, prior).is_some_and(|r| r.status.is_settled());
            if !settled {
                return Err(EngineError::Rule1 {
                    stage,
                    missing: prior,
                    branch: branch.to_string(),
                });
            }
        }

        let mut notices = Vec::new();
        if matches!(stage, Stage::Builder | Stage::Auditor) && !pkg.has_design_authority() {
            let design_waived = self
                .latest(branch, Stage::Design)
                .is_some_and(|r| r.status == RecordStatus::Waived);
            if !design_waived {
                return Err(EngineError::Rule2 {
                    stage,
                    package_id: package_id.to_string(),
                });
            }
            notices.push(Notice::warning(
                "DESIGN_WAIVED",
                format!("{stage} proceeds without a design authority because Design was waived on '{branch}'"),
            ));
        }

        if stage == Stage::Auditor {
            if let Some(builder_tool) = self.latest(branch, Stage::Builder).and_then(|r| r.tool.as_ref()) {
                if builder_tool.same_tool(&tool) {
                    return Err(EngineError::Rule6 {
                        tool: tool.name.clone(),
                        branch: branch.to_string(),
                    });
                }
                if builder_tool.vendor() == tool.vendor() {
                    notices.push(Notice::info(
                        "SAME_VENDOR",
                        format!(
                            "auditor '{}' and builder '{}' appear to share a vendor",
                            tool.name, builder_tool.name
                        ),
                    ));
                }
            }
        }

        let record = StageRecord {
            record_id: self.next_record_id(),
            stage,
            branch_id: branch.to_string(),
            tool: Some(tool),
            package_id: Some(package_id.to_string()),
            output_artifact: None,
            status: RecordStatus::Open,
            waiver_reason: None,
            findings: Vec::new(),
            cross_tool_pattern: None,
        };
        self.commit(record.clone(), vec![PipelineEvent::StageBegun { record }], notices)
    }

    /// Mark an open record Complete with its output artifact.
    pub fn complete_stage(
        &mut self,
        record_id: &str,
        output_artifact: &str,
        cross_tool_pattern: Option<CrossToolPattern>,
    ) -> Result<Transition<StageRecord>, EngineError> {
        self.ensure_active()?;
        require_nonempty("output_artifact", output_artifact)?;
        let record = self
            .record(record_id)
            .ok_or_else(|| EngineError::UnknownRecord(record_id.to_string()))?;
        if record.status != RecordStatus::Open {
            return Err(EngineError::InvalidState(format!(
                "record {record_id} is already {:?}",
                record.status
            )));
        }
        if cross_tool_pattern.is_some() && record.stage != Stage::Auditor {
            return Err(EngineError::Validation(
                "cross-tool patterns are recorded on Auditor records only".into(),
            ));
        }
        let event = PipelineEvent::StageCompleted {
            record_id: record_id.to_string(),
            output_artifact: output_artifact.to_string(),
            cross_tool_pattern,
        };
        let mut t = self.commit((), vec![event], Vec::new())?;
        let done = self.record(record_id).cloned().expect("record present");
        Ok(Transition {
            value: done,
            events: std::mem::take(&mut t.events),
            notices: Vec::new(),
        })
    }

    /// Waive a stage. The notice names the failure mode to expect.
    pub fn skip_stage(
        &mut self,
        stage: Stage,
        waiver_reason: &str,
        branch: &str,
    ) -> Result<Transition<StageRecord>, EngineError> {
        self.ensure_active()?;
        self.ensure_branch(branch)?;
        let failure_mode = skip_failure_mode(stage).ok_or(EngineError::NotSkippable)?;
        require_nonempty("waiver_reason", waiver_reason)?;
        if let Some(r) = self.latest(branch, stage) {
            match r.status {
                RecordStatus::Open => {
                    return Err(EngineError::InvalidState(format!(
                        "{stage} has open record {} on branch '{branch}'",
                        r.record_id
                    )))
                }
                RecordStatus::Complete | RecordStatus::Waived => {
                    return Err(EngineError::InvalidState(format!(
                        "{stage} is already {:?} on branch '{branch}' ({})",
                        r.status, r.record_id
                    )))
                }
            }
        }
        let record = StageRecord {
            record_id: self.next_record_id(),
            stage,
            branch_id: branch.to_string(),
            tool: None,
            package_id: None,
            output_artifact: None,
            status: RecordStatus::Waived,
            waiver_reason: Some(waiver_reason.to_string()),
            findings: Vec::new(),
            cross_tool_pattern: None,
        };
        let notice = Notice::warning(
            "STAGE_WAIVED",
            format!("{stage} waived on branch '{branch}': {failure_mode}"),
        );
        self.commit(record.clone(), vec![PipelineEvent::StageWaived { record }], vec![notice])
    }

    /// Record an auditor finding and route it back to the stage that fixes it.
    pub fn record_finding(
        &mut self,
        branch: &str,
        finding: AuditFinding,
    ) -> Result<Transition<IterationRoute>, EngineError> {
        self.ensure_active()?;
        self.ensure_branch(branch)?;
        require_nonempty("finding_id", &finding.finding_id)?;
        require_nonempty("description", &finding.description)?;
        if self.findings.iter().any(|f| f.finding.finding_id == finding.finding_id) {
            return Err(EngineError::Validation(format!(
                "finding id '{}' already recorded",
                finding.finding_id
            )));
        }
        let auditor = self
            .own_latest(branch, Stage::Auditor)
            .filter(|r| matches!(r.status, RecordStatus::Open | RecordStatus::Complete))
            .ok_or_else(|| EngineError::NoAuditor(branch.to_string()))?;
        let auditor_record_id = auditor.record_id.clone();

        let target = route_for(finding.category);
        let (record_id, opened) = match self.open_record(branch, target) {
            Some(open) => (open.record_id.clone(), None),
            None => {
                let previous = self.latest(branch, target);
                let record = StageRecord {
                    record_id: self.next_record_id(),
                    stage: target,
                    branch_id: branch.to_string(),
                    tool: previous.and_then(|r| r.tool.clone()),
                    package_id: previous.and_then(|r| r.package_id.clone()),
                    output_artifact: None,
                    status: RecordStatus::Open,
                    waiver_reason: None,
                    findings: Vec::new(),
                    cross_tool_pattern: None,
                };
                (record.record_id.clone(), Some(record))
            }
        };
        let route = IterationRoute {
            finding_id: finding.finding_id.clone(),
            target_stage: target,
            record_id: record_id.clone(),
        };
        let events = vec![
            PipelineEvent::FindingRecorded {
                branch_id: branch.to_string(),
                auditor_record_id,
                finding: finding.clone(),
            },
            PipelineEvent::IterationRouted {
                finding_id: finding.finding_id,
                branch_id: branch.to_string(),
                target_stage: target,
                record_id,
                opened,
            },
        ];
        self.commit(route, events, Vec::new())
    }

    /// Fan a completed design out to parallel branches.
    pub fn branch_builders(
        &mut self,
        design_record_id: &str,
        branch_names: &[String],
    ) -> Result<Transition<Vec<String>>, EngineError> {
        self.ensure_active()?;
        let design = self
            .record(design_record_id)
            .ok_or_else(|| EngineError::UnknownRecord(design_record_id.to_string()))?;
        if design.stage != Stage::Design || design.status != RecordStatus::Complete {
            return Err(EngineError::DesignNotComplete(design_record_id.to_string()));
        }
        if branch_names.is_empty() {
            return Err(EngineError::Validation("at least one branch name is required".into()));
        }
        let parent = design.branch_id.clone();
        let mut inherited = Vec::new();
        if let Some(reviewer) = self.latest(&parent, Stage::Reviewer).filter(|r| r.status.is_settled()) {
            inherited.push(reviewer.record_id.clone());
        }
        inherited.push(design_record_id.to_string());

        let mut seen = std::collections::BTreeSet::new();
        for name in branch_names {
            require_nonempty("branch name", name)?;
            if name.contains(char::is_whitespace) {
                return Err(EngineError::Validation(format!("branch name '{name}' contains whitespace")));
            }
            if self.branches.contains_key(name) || !seen.insert(name.as_str()) {
                return Err(EngineError::DuplicateBranch(name.clone()));
            }
        }
        let events = branch_names
            .iter()
            .map(|name| PipelineEvent::BranchCreated {
                branch_id: name.clone(),
                parent: parent.clone(),
                design_record_id: design_record_id.to_string(),
                inherited: inherited.clone(),
            })
            .collect();
        self.commit(branch_names.to_vec(), events, Vec::new())
    }

    /// Warnings a close would produce, or the error that blocks it.
    pub fn close_check(&self) -> Result<Vec<Notice>, EngineError> {
        self.ensure_active()?;
        let mut warnings = Vec::new();
        for branch in self.building_branches() {
            let built = self
                .own_latest(branch, Stage::Builder)
                .is_some_and(|r| r.status == RecordStatus::Complete);
            if !built {
                return Err(EngineError::IncompleteBuild(branch.to_string()));
            }
            let builder = self.own_latest(branch, Stage::Builder).and_then(|r| r.tool.as_ref());
            let auditor = self.own_latest(branch, Stage::Auditor);
            if let (Some(b), Some(a)) = (builder, auditor.and_then(|r| r.tool.as_ref())) {
                if b.same_tool(a) {
                    return Err(EngineError::Rule6 {
                        tool: a.name.clone(),
                        branch: branch.to_string(),
                    });
                }
            }
            if !auditor.is_some_and(|r| r.status.is_settled()) {
                warnings.push(Notice::warning(
                    "NO_AUDITOR",
                    format!("branch '{branch}' closes without a Complete or Waived Auditor"),
                ));
            }
        }
        for r in self.records.iter().filter(|r| r.status == RecordStatus::Open && r.stage != Stage::Builder) {
            if r.stage == Stage::Auditor && self.own_latest(&r.branch_id, Stage::Auditor).map(|a| &a.record_id) == Some(&r.record_id) {
                // already reported as NO_AUDITOR
                continue;
            }
            warnings.push(Notice::warning(
                "OPEN_STAGE",
                format!("{} record {} on branch '{}' is still open", r.stage, r.record_id, r.branch_id),
            ));
        }
        Ok(warnings)
    }

    /// Close the pipeline. Missing auditors are warnings, not errors.
    pub fn close(&mut self) -> Result<Transition<Vec<Notice>>, EngineError> {
        let warnings = self.close_check()?;
        let event = PipelineEvent::PipelineClosed { warnings: warnings.clone() };
        self.commit(warnings.clone(), vec![event], warnings)
    }

    /// The reducer. Every state change goes through here.
    pub fn apply(&mut self, event: &PipelineEvent) -> Result<(), EngineError> {
        if self.is_closed() {
            return Err(EngineError::Replay(format!("{} after PipelineClosed", event.kind())));
        }
        match event {
            PipelineEvent::PipelineCreated { .. } => {
                return Err(EngineError::Replay("PipelineCreated may only appear first".into()))
            }
            PipelineEvent::PackageAttached { package } => {
                self.packages.insert(package.package_id.clone(), package.clone());
            }
            PipelineEvent::StageBegun { record } | PipelineEvent::StageWaived { record } => {
                if self.record(&record.record_id).is_some() {
                    return Err(EngineError::Replay(format!("duplicate record {}", record.record_id)));
                }
                self.records.push(record.clone());
            }
            PipelineEvent::StageCompleted {
                record_id,
                output_artifact,
                cross_tool_pattern,
            } => {
                let r = self
                    .record_mut(record_id)
                    .ok_or_else(|| EngineError::Replay(format!("unknown record {record_id}")))?;
                r.status = RecordStatus::Complete;
                r.output_artifact = Some(output_artifact.clone());
                r.cross_tool_pattern = *cross_tool_pattern;
            }
            PipelineEvent::FindingRecorded {
                branch_id,
                auditor_record_id,
                finding,
            } => {
                self.findings.push(RecordedFinding {
                    finding: finding.clone(),
                    branch_id: branch_id.clone(),
                    auditor_record_id: auditor_record_id.clone(),
                    target_stage: route_for(finding.category),
                    routed_record_id: None,
                });
            }
            PipelineEvent::IterationRouted {
                finding_id,
                record_id,
                opened,
                ..
            } => {
                if let Some(record) = opened {
                    self.records.push(record.clone());
                }
                let r = self
                    .record_mut(record_id)
                    .ok_or_else(|| EngineError::Replay(format!("unknown record {record_id}")))?;
                r.findings.push(finding_id.clone());
                let f = self
                    .findings
                    .iter_mut()
                    .find(|f| &f.finding.finding_id == finding_id)
                    .ok_or_else(|| EngineError::Replay(format!("unknown finding {finding_id}")))?;
                f.routed_record_id = Some(record_id.clone());
            }
            PipelineEvent::BranchCreated {
                branch_id,
                parent,
                inherited,
                ..
            } => {
                self.branches.insert(
                    branch_id.clone(),
                    Branch {
                        branch_id: branch_id.clone(),
                        parent: Some(parent.clone()),
                        inherited: inherited.clone(),
                    },
                );
            }
            PipelineEvent::PipelineClosed { .. } => {
                self.status = PipelineStatus::Closed;
            }
        }
        self.revision += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roles::{ContextElement, ContextRole, ElementTag, SourceKind};

    fn tool(name: &str) -> ToolDescriptor {
        ToolDescriptor::new(name, ToolType::GeneralistLlm)
    }

    fn package(p: &Pipeline, id: &str, stage: Stage, design_authority: bool) -> ContextPackage {
        let mut authority = ContextElement::new("design", ContextRole::Authority, SourceKind::File, "Design", "design.md");
        if design_authority {
            authority = authority.with_tag(ElementTag::DesignAuthority);
        }
        ContextPackage::new(id, p.id.clone(), stage).with_element(authority)
    }

    fn attach(p: &mut Pipeline, id: &str, stage: Stage, design_authority: bool) {
        let pkg = package(p, id, stage, design_authority);
        p.attach_package(pkg).unwrap();
    }

    fn run(p: &mut Pipeline, stage: Stage, tool_name: &str, branch: &str) -> String {
        let pkg_id = format!("{}-{}-{}", stage.slug(), branch, p.records.len());
        attach(p, &pkg_id, stage, true);
        let rec = p.begin_stage(stage, tool(tool_name), &pkg_id, branch).unwrap().value;
        p.complete_stage(&rec.record_id, &format!("artifacts/{}.md", rec.record_id), None)
            .unwrap();
        rec.record_id
    }

    fn sprint() -> Pipeline {
        Pipeline::create("REPORT", "PAPER", Scale::Sprint).unwrap().value
    }

    #[test]
    fn create_sets_id_and_main_branch() {
        let t = Pipeline::create("PORTAL", "UI", Scale::Sprint).unwrap();
        assert_eq!(t.value.id.to_string(), "P-PORTAL-UI");
        assert_eq!(t.value.branches.keys().collect::<Vec<_>>(), ["main"]);
        assert_eq!(t.value.status, PipelineStatus::Active);
        assert_eq!(t.events.len(), 1);
        assert!(matches!(
            Pipeline::create("x", "y", Scale::Task),
            Err(EngineError::Validation(_))
        ));
    }

    #[test]
    fn builder_with_all_gates_satisfied() {
        let mut p = sprint();
        run(&mut p, Stage::Reviewer, "Claude", MAIN_BRANCH);
        run(&mut p, Stage::Design, "Claude", MAIN_BRANCH);
        attach(&mut p, "b", Stage::Builder, true);
        let t = p.begin_stage(Stage::Builder, tool("Claude"), "b", MAIN_BRANCH).unwrap();
        assert_eq!(t.value.status, RecordStatus::Open);
        assert!(t.notices.is_empty());
    }

    #[test]
    fn builder_before_design_violates_rule1() {
        let mut p = sprint();
        run(&mut p, Stage::Reviewer, "Claude", MAIN_BRANCH);
        attach(&mut p, "b", Stage::Builder, true);
        let err = p.begin_stage(Stage::Builder, tool("Claude"), "b", MAIN_BRANCH).unwrap_err();
        assert_eq!(err.code(), "RULE1_VIOLATION");
        assert!(err.to_string().contains("requires Design"));
    }

    #[test]
    fn builder_without_design_authority_violates_rule2() {
        let mut p = sprint();
        run(&mut p, Stage::Reviewer, "Claude", MAIN_BRANCH);
        run(&mut p, Stage::Design, "Claude", MAIN_BRANCH);
        attach(&mut p, "b", Stage::Builder, false);
        let err = p.begin_stage(Stage::Builder, tool("Claude"), "b", MAIN_BRANCH).unwrap_err();
        assert_eq!(err.code(), "RULE2_VIOLATION");
    }

    #[test]
    fn waived_design_downgrades_rule2_to_warning() {
        let mut p = sprint();
        p.skip_stage(Stage::Reviewer, "quick fix", MAIN_BRANCH).unwrap();
        p.skip_stage(Stage::Design, "quick fix", MAIN_BRANCH).unwrap();
        attach(&mut p, "b", Stage::Builder, false);
        let t = p.begin_stage(Stage::Builder, tool("Claude"), "b", MAIN_BRANCH).unwrap();
        assert_eq!(t.notices.len(), 1);
        assert_eq!(t.notices[0].severity, Severity::Warning);
    }

    #[test]
    fn auditor_with_builder_tool_violates_rule6() {
        let mut p = sprint();
        run(&mut p, Stage::Reviewer, "Claude", MAIN_BRANCH);
        run(&mut p, Stage::Design, "Claude", MAIN_BRANCH);
        run(&mut p, Stage::Builder, "Claude", MAIN_BRANCH);
        attach(&mut p, "a", Stage::Auditor, true);
        let err = p.begin_stage(Stage::Auditor, tool("  claude "), "a", MAIN_BRANCH).unwrap_err();
        assert_eq!(err.code(), "RULE6_VIOLATION");
        assert!(err.to_string().contains("The executor cannot be the auditor"));
        let ok = p.begin_stage(Stage::Auditor, tool("Claude Code"), "a", MAIN_BRANCH).unwrap();
        assert_eq!(ok.notices[0].code, "SAME_VENDOR");
    }

    #[test]
    fn package_stage_must_match() {
        let mut p = sprint();
        attach(&mut p, "d", Stage::Design, true);
        let err = p.begin_stage(Stage::Reviewer, tool("Claude"), "d", MAIN_BRANCH).unwrap_err();
        assert_eq!(err.code(), "STAGE_MISMATCH");
    }

    #[test]
    fn complete_twice_and_after_close() {
        let mut p = Pipeline::create("A", "B", Scale::Task).unwrap().value;
        let r = run(&mut p, Stage::Reviewer, "Claude", MAIN_BRANCH);
        assert_eq!(p.record(&r).unwrap().status, RecordStatus::Complete);
        assert_eq!(
            p.complete_stage(&r, "again.md", None).unwrap_err().code(),
            "INVALID_STATE"
        );
        p.skip_stage(Stage::Design, "small", MAIN_BRANCH).unwrap();
        let b = run(&mut p, Stage::Builder, "Claude", MAIN_BRANCH);
        p.close().unwrap();
        assert_eq!(p.complete_stage(&b, "x.md", None).unwrap_err().code(), "PIPELINE_CLOSED");
        assert_eq!(
            p.skip_stage(Stage::Auditor, "late", MAIN_BRANCH).unwrap_err().code(),
            "PIPELINE_CLOSED"
        );
    }

    #[test]
    fn skip_warnings_carry_failure_modes() {
        let mut p = sprint();
        let r = p.skip_stage(Stage::Reviewer, "known domain", MAIN_BRANCH).unwrap();
        assert!(r.notices[0].message.contains("generic or misaligned"));
        assert_eq!(r.value.status, RecordStatus::Waived);
        assert_eq!(r.value.waiver_reason.as_deref(), Some("known domain"));
        let d = p.skip_stage(Stage::Design, "one-liner", MAIN_BRANCH).unwrap();
        assert!(d.notices[0].message.contains("structurally incoherent output"));
        let a = p.skip_stage(Stage::Auditor, "email", MAIN_BRANCH).unwrap();
        assert!(a.notices[0].message.contains("accumulated defects"));
        assert_eq!(
            p.skip_stage(Stage::Builder, "x", MAIN_BRANCH).unwrap_err().code(),
            "NOT_SKIPPABLE"
        );
        assert_eq!(
            p.skip_stage(Stage::Reviewer, "again", MAIN_BRANCH).unwrap_err().code(),
            "INVALID_STATE"
        );
    }

    fn audited() -> Pipeline {
        let mut p = sprint();
        run(&mut p, Stage::Reviewer, "Claude", MAIN_BRANCH);
        run(&mut p, Stage::Design, "Claude", MAIN_BRANCH);
        run(&mut p, Stage::Builder, "Claude", MAIN_BRANCH);
        run(&mut p, Stage::Auditor, "ChatGPT", MAIN_BRANCH);
        p
    }

    fn finding(id: &str, severity: FindingSeverity, category: FindingCategory) -> AuditFinding {
        AuditFinding {
            finding_id: id.into(),
            severity,
            category,
            description: "desc".into(),
        }
    }

    #[test]
    fn findings_route_by_category() {
        let mut p = audited();
        let r1 = p
            .record_finding(MAIN_BRANCH, finding("F-1", FindingSeverity::Critical, FindingCategory::ExecutionError))
            .unwrap();
        assert_eq!(r1.value.target_stage, Stage::Builder);
        assert_eq!(r1.events.len(), 2);
        let r2 = p
            .record_finding(MAIN_BRANCH, finding("F-2", FindingSeverity::Major, FindingCategory::Structural))
            .unwrap();
        assert_eq!(r2.value.target_stage, Stage::Design);
        let r3 = p
            .record_finding(MAIN_BRANCH, finding("F-3", FindingSeverity::Major, FindingCategory::MissingContext))
            .unwrap();
        assert_eq!(r3.value.target_stage, Stage::Reviewer);

        // a second execution error joins the builder record that is already open
        let r4 = p
            .record_finding(MAIN_BRANCH, finding("F-4", FindingSeverity::Minor, FindingCategory::ExecutionError))
            .unwrap();
        assert_eq!(r4.value.record_id, r1.value.record_id);
        let reopened = p.record(&r1.value.record_id).unwrap();
        assert_eq!(reopened.findings, ["F-1", "F-4"]);
        assert_eq!(reopened.tool.as_ref().unwrap().name, "Claude");

        let dup = p.record_finding(MAIN_BRANCH, finding("F-4", FindingSeverity::Minor, FindingCategory::Structural));
        assert_eq!(dup.unwrap_err().code(), "VALIDATION_ERROR");
    }

    #[test]
    fn finding_without_auditor_rejected() {
        let mut p = sprint();
        let err = p
            .record_finding(MAIN_BRANCH, finding("F-1", FindingSeverity::Major, FindingCategory::Structural))
            .unwrap_err();
        assert_eq!(err.code(), "NO_AUDITOR");
    }

    #[test]
    fn branches_inherit_review_and_design() {
        let mut p = sprint();
        run(&mut p, Stage::Reviewer, "Claude", MAIN_BRANCH);
        let design = run(&mut p, Stage::Design, "Claude", MAIN_BRANCH);
        let names = vec!["FRONTEND".to_string(), "BACKEND".to_string()];
        assert_eq!(p.branch_builders(&design, &names).unwrap().value, names);
        assert_eq!(p.branches.len(), 3);
        // each branch can start its builder straight away
        run(&mut p, Stage::Builder, "Claude", "FRONTEND");
        run(&mut p, Stage::Builder, "Cowork", "BACKEND");
        assert_eq!(
            p.branch_builders(&design, &["FRONTEND".to_string()]).unwrap_err().code(),
            "DUPLICATE_BRANCH"
        );
        assert_eq!(
            p.branch_builders(&design, &["X".into(), "X".into()]).unwrap_err().code(),
            "DUPLICATE_BRANCH"
        );
    }

    #[test]
    fn branching_requires_complete_design() {
        let mut p = sprint();
        run(&mut p, Stage::Reviewer, "Claude", MAIN_BRANCH);
        attach(&mut p, "d", Stage::Design, true);
        let open = p.begin_stage(Stage::Design, tool("Claude"), "d", MAIN_BRANCH).unwrap().value;
        let err = p.branch_builders(&open.record_id, &["A".into()]).unwrap_err();
        assert_eq!(err.code(), "DESIGN_NOT_COMPLETE");
    }

    #[test]
    fn task_scale_close_without_auditor_warns() {
        let mut p = Pipeline::create("MAIL", "OPS", Scale::Task).unwrap().value;
        p.skip_stage(Stage::Reviewer, "email", MAIN_BRANCH).unwrap();
        p.skip_stage(Stage::Design, "email", MAIN_BRANCH).unwrap();
        run(&mut p, Stage::Builder, "Claude", MAIN_BRANCH);
        let t = p.close().unwrap();
        assert_eq!(t.value.len(), 1);
        assert_eq!(t.value[0].code, "NO_AUDITOR");
        assert!(p.is_closed());
    }

    #[test]
    fn full_sprint_closes_clean() {
        let mut p = audited();
        assert!(p.close().unwrap().value.is_empty());
    }

    #[test]
    fn close_with_open_builder_fails() {
        let mut p = sprint();
        run(&mut p, Stage::Reviewer, "Claude", MAIN_BRANCH);
        run(&mut p, Stage::Design, "Claude", MAIN_BRANCH);
        attach(&mut p, "b", Stage::Builder, true);
        p.begin_stage(Stage::Builder, tool("Claude"), "b", MAIN_BRANCH).unwrap();
        assert_eq!(p.close().unwrap_err().code(), "INCOMPLETE_BUILD");
    }

    #[test]
    fn replay_matches_state() {
        let mut p = audited();
        let mut history: Vec<PipelineEvent> = Vec::new();
        // rebuild the same history by hand to compare
        let mut q = Pipeline::create("REPORT", "PAPER", Scale::Sprint).unwrap();
        history.append(&mut q.events);
        for r in &p.records {
            let pkg = p.packages.get(r.package_id.as_ref().unwrap()).unwrap().clone();
            history.push(PipelineEvent::PackageAttached { package: pkg });
            let mut begun = r.clone();
            begun.status = RecordStatus::Open;
            begun.output_artifact = None;
            history.push(PipelineEvent::StageBegun { record: begun });
            history.push(PipelineEvent::StageCompleted {
                record_id: r.record_id.clone(),
                output_artifact: r.output_artifact.clone().unwrap(),
                cross_tool_pattern: None,
            });
        }
        assert_eq!(Pipeline::replay(&history).unwrap(), p);
        let t = p.close().unwrap();
        history.extend(t.events);
        assert_eq!(Pipeline::replay(&history).unwrap(), p);
        assert_eq!(p.revision as usize, history.len());
    }

    #[test]
    fn package_must_belong_to_pipeline() {
        let mut p = sprint();
        let other = PipelineId::new("OTHER", "X").unwrap();
        let pkg = ContextPackage::new("k", other, Stage::Builder);
        assert_eq!(p.attach_package(pkg).unwrap_err().code(), "VALIDATION_ERROR");
        attach(&mut p, "k", Stage::Builder, true);
        let same = package(&p, "k", Stage::Builder, true);
        assert!(p.attach_package(same).unwrap().events.is_empty());
        let different = package(&p, "k", Stage::Builder, false);
        assert_eq!(p.attach_package(different).unwrap_err().code(), "PACKAGE_CONFLICT");
    }
}
