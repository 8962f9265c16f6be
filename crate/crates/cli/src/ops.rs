//! Operations shared by the command line and the HTTP service.
//!
//! Each mutation has exactly one implementation here, so a CLI invocation
//! and the matching HTTP request produce the same state transition.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use ctxpipe_core::dataset::{self, AuthorityRow, Dataset, DatasetError, DatasetLint, GroupBy, QualityTable, SizeTable};
use ctxpipe_core::estimators::{self, CaptureRecapture, EstimateError, IbInputs};
use ctxpipe_core::pipeline::{route_for, Branch, PipelineStatus, RecordedFinding, Transition};
use ctxpipe_core::roles::{
    self, ConflictResolution, ContextPackage, PackageError, PackageFinding, Severity, SizeClass,
};
use ctxpipe_core::template::{self, LibraryError, StageTemplate, TemplateError};
use ctxpipe_core::trail::{self, TrailError, TrailEvent, Verification};
use ctxpipe_core::workspace::{Committed, StoreError, Workspace};
use ctxpipe_core::{
    AuditFinding, CrossToolPattern, EngineError, FindingCategory, FindingSeverity, IterationRoute, Notice,
    Pipeline, PipelineId, RecordStatus, Scale, Stage, StageRecord, ToolDescriptor, ToolType,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

// ---------------------------------------------------------------------------
// Errors

/// How an error maps onto exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Invalid,
    Rule,
    NotFound,
    Conflict,
    Busy,
    Unauthorized,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OpError {
    pub code: String,
    pub rule: Option<String>,
    pub message: String,
    #[serde(skip)]
    pub class: ErrorClass,
}

impl fmt::Display for OpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for OpError {}

impl OpError {
    pub fn new(class: ErrorClass, code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            rule: None,
            message: message.into(),
            class,
        }
    }

    pub fn invalid(code: &str, message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Invalid, code, message)
    }

    /// Build from an error whose Display starts with `CODE: `.
    fn coded(class: ErrorClass, code: &str, display: String) -> Self {
        let message = display
            .strip_prefix(code)
            .and_then(|m| m.strip_prefix(": "))
            .map(str::to_string)
            .unwrap_or(display);
        Self::new(class, code, message)
    }
}

impl From<EngineError> for OpError {
    fn from(e: EngineError) -> Self {
        let class = if e.rule().is_some() {
            ErrorClass::Rule
        } else if e.is_not_found() {
            ErrorClass::NotFound
        } else {
            match e {
                EngineError::Closed(_) | EngineError::InvalidState(_) | EngineError::PackageConflict(_) => {
                    ErrorClass::Conflict
                }
                EngineError::Replay(_) => ErrorClass::Internal,
                _ => ErrorClass::Invalid,
            }
        };
        let mut out = OpError::coded(class, e.code(), e.to_string());
        out.rule = e.rule().map(str::to_string);
        out
    }
}

impl From<StoreError> for OpError {
    fn from(e: StoreError) -> Self {
        let class = match &e {
            StoreError::Engine(inner) => return inner.clone().into(),
            StoreError::Library(inner) => return inner.clone().into(),
            StoreError::UnknownPipeline(_) | StoreError::UnknownDataset(_) => ErrorClass::NotFound,
            StoreError::PipelineExists(_) => ErrorClass::Conflict,
            StoreError::Busy(_) | StoreError::ServerLocked(_) => ErrorClass::Busy,
            StoreError::BadName(_) | StoreError::Dataset(_) | StoreError::NotWorkspace(_) | StoreError::SchemaVersion(_) => {
                ErrorClass::Invalid
            }
            _ => ErrorClass::Internal,
        };
        OpError::coded(class, e.code(), e.to_string())
    }
}

impl From<LibraryError> for OpError {
    fn from(e: LibraryError) -> Self {
        let class = match e {
            LibraryError::UnknownType(_) => ErrorClass::NotFound,
            _ => ErrorClass::Invalid,
        };
        OpError::coded(class, e.code(), e.to_string())
    }
}

impl From<PackageError> for OpError {
    fn from(e: PackageError) -> Self {
        let class = match e {
            PackageError::UnknownElement(_) => ErrorClass::NotFound,
            _ => ErrorClass::Invalid,
        };
        OpError::coded(class, e.code(), e.to_string())
    }
}

impl From<EstimateError> for OpError {
    fn from(e: EstimateError) -> Self {
        OpError::coded(ErrorClass::Invalid, e.code(), e.to_string())
    }
}

impl From<TrailError> for OpError {
    fn from(e: TrailError) -> Self {
        StoreError::Trail(e).into()
    }
}

impl From<DatasetError> for OpError {
    fn from(e: DatasetError) -> Self {
        OpError::coded(ErrorClass::Invalid, e.code(), e.to_string())
    }
}

fn template_errors(errs: Vec<TemplateError>) -> OpError {
    let code = errs.first().map_or("INVALID_TEMPLATE", TemplateError::code);
    let message = errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
    OpError::invalid(code, message)
}

pub type OpResult<T> = Result<T, OpError>;

/// Deserialize an enum field through its case-insensitive `FromStr`.
fn de_parse<'de, D, T>(d: D) -> Result<T, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: fmt::Display,
{
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

fn de_parse_opt<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: fmt::Display,
{
    match Option::<String>::deserialize(d)? {
        Some(s) => s.parse().map(Some).map_err(serde::de::Error::custom),
        None => Ok(None),
    }
}

fn main_branch() -> String {
    ctxpipe_core::pipeline::MAIN_BRANCH.to_string()
}

fn default_tool_type() -> ToolType {
    ToolType::GeneralistLlm
}

pub fn parse_pipeline_id(s: &str) -> OpResult<PipelineId> {
    s.parse().map_err(|e: ctxpipe_core::pipeline_id::PipelineIdError| OpError::invalid("BAD_PIPELINE_ID", e.to_string()))
}

/// Decode a JSON request body, reporting failures as validation errors.
pub fn decode<T: DeserializeOwned>(value: serde_json::Value) -> OpResult<T> {
    serde_json::from_value(value).map_err(|e| OpError::invalid("BAD_REQUEST", e.to_string()))
}

// ---------------------------------------------------------------------------
// Responses

/// Result of a state change: the operation's value plus what was recorded.
#[derive(Debug, Clone, Serialize)]
pub struct Mutation<T> {
    #[serde(flatten)]
    pub result: T,
    pub notices: Vec<Notice>,
    pub revision: u64,
    pub events: Vec<TrailEvent>,
}

impl<T> Mutation<T> {
    fn from_committed<U>(c: Committed<U>, f: impl FnOnce(U) -> T) -> Self {
        Mutation {
            result: f(c.value),
            notices: c.notices,
            revision: c.pipeline.revision,
            events: c.events,
        }
    }
}

fn commit<T, F>(ws: &Workspace, id: &PipelineId, op: F) -> OpResult<Mutation<T>>
where
    F: FnOnce(&mut Pipeline) -> Result<Transition<T>, EngineError>,
{
    Ok(Mutation::from_committed(ws.mutate(id, op)?, |v| v))
}

// ---------------------------------------------------------------------------
// Workspace and pipelines

#[derive(Debug, Clone, Serialize)]
pub struct InitResult {
    pub root: String,
    pub schema_version: String,
}

pub fn init(root: &std::path::Path) -> OpResult<InitResult> {
    let ws = Workspace::init(root)?;
    Ok(InitResult {
        root: ws.root().display().to_string(),
        schema_version: ctxpipe_core::workspace::SCHEMA_VERSION.to_string(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub pipeline_id: PipelineId,
    pub scale: Scale,
    pub status: PipelineStatus,
    pub revision: u64,
}

pub fn list_pipelines(ws: &Workspace) -> OpResult<Vec<PipelineSummary>> {
    ws.list_pipelines()?
        .into_iter()
        .map(|id| {
            let p = ws.load(&id)?;
            Ok(PipelineSummary {
                pipeline_id: p.id,
                scale: p.scale,
                status: p.status,
                revision: p.revision,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CreatePipelineRequest {
    pub project: String,
    pub domain: String,
    #[serde(deserialize_with = "de_parse")]
    pub scale: Scale,
}

#[derive(Debug, Clone, Serialize)]
pub struct Created {
    pub pipeline_id: PipelineId,
}

pub fn create_pipeline(ws: &Workspace, req: &CreatePipelineRequest) -> OpResult<Mutation<Created>> {
    let c = ws.create_pipeline(&req.project, &req.domain, req.scale)?;
    Ok(Mutation::from_committed(c, |pipeline_id| Created { pipeline_id }))
}

/// Display state of one stage on one branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneStatus {
    Open,
    Complete,
    Waived,
    /// Not started, and a predecessor is not settled yet.
    Blocked,
    /// Not started, and free to begin.
    Ready,
}

#[derive(Debug, Clone, Serialize)]
pub struct LaneCell {
    pub stage: Stage,
    pub status: LaneStatus,
    pub record_id: Option<String>,
    pub inherited: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Lane {
    pub branch_id: String,
    pub parent: Option<String>,
    pub stages: Vec<LaneCell>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineView {
    pub pipeline: Pipeline,
    pub lanes: Vec<Lane>,
    /// What closing now would report, or the error that blocks it.
    pub close_warnings: Vec<Notice>,
    pub close_blocker: Option<OpError>,
}

fn lanes(p: &Pipeline) -> Vec<Lane> {
    p.branches
        .values()
        .map(|b: &Branch| {
            let mut stages = Vec::new();
            for stage in Stage::ALL {
                let rec = p.latest(&b.branch_id, stage);
                let settled = |s: Stage| p.latest(&b.branch_id, s).is_some_and(|r| r.status.is_settled());
                let status = match rec.map(|r| r.status) {
                    Some(RecordStatus::Open) => LaneStatus::Open,
                    Some(RecordStatus::Complete) => LaneStatus::Complete,
                    Some(RecordStatus::Waived) => LaneStatus::Waived,
                    None if stage.predecessors().iter().all(|s| settled(*s)) => LaneStatus::Ready,
                    None => LaneStatus::Blocked,
                };
                stages.push(LaneCell {
                    stage,
                    status,
                    record_id: rec.map(|r| r.record_id.clone()),
                    inherited: rec.is_some_and(|r| r.branch_id != b.branch_id),
                });
            }
            Lane {
                branch_id: b.branch_id.clone(),
                parent: b.parent.clone(),
                stages,
            }
        })
        .collect()
}

pub fn pipeline_view(ws: &Workspace, id: &PipelineId) -> OpResult<PipelineView> {
    let p = ws.load(id)?;
    let (close_warnings, close_blocker) = if p.is_closed() {
        (Vec::new(), None)
    } else {
        match p.close_check() {
            Ok(w) => (w, None),
            Err(e) => (Vec::new(), Some(e.into())),
        }
    };
    Ok(PipelineView {
        lanes: lanes(&p),
        pipeline: p,
        close_warnings,
        close_blocker,
    })
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
pub struct CloseRequest {
    /// Acknowledge missing auditors on a sprint-scale pipeline.
    #[serde(default)]
    pub confirm: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosePreview {
    pub warnings: Vec<Notice>,
    pub needs_confirmation: bool,
}

fn needs_confirmation(p: &Pipeline, warnings: &[Notice]) -> bool {
    p.scale == Scale::Sprint && warnings.iter().any(|w| w.code == "NO_AUDITOR")
}

pub fn close_preview(ws: &Workspace, id: &PipelineId) -> OpResult<ClosePreview> {
    let p = ws.load(id)?;
    let warnings = p.close_check()?;
    Ok(ClosePreview {
        needs_confirmation: needs_confirmation(&p, &warnings),
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Closed {
    pub pipeline_id: PipelineId,
    pub warnings: Vec<Notice>,
}

pub fn close_pipeline(ws: &Workspace, id: &PipelineId, req: &CloseRequest) -> OpResult<Mutation<Closed>> {
    let mut refused = None;
    let result = ws.mutate(id, |p| {
        let warnings = p.close_check()?;
        if needs_confirmation(p, &warnings) && !req.confirm {
            refused = Some(warnings);
            return Ok(Transition {
                value: Vec::new(),
                events: Vec::new(),
                notices: Vec::new(),
            });
        }
        p.close()
    })?;
    if let Some(warnings) = refused {
        let list = warnings.iter().map(|w| w.message.as_str()).collect::<Vec<_>>().join("; ");
        return Err(OpError::new(
            ErrorClass::Conflict,
            "CONFIRMATION_REQUIRED",
            format!("sprint-scale pipeline would close with missing auditors ({list}); confirm to close anyway"),
        ));
    }
    Ok(Mutation::from_committed(result, |warnings| Closed {
        pipeline_id: id.clone(),
        warnings,
    }))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct BranchRequest {
    pub design_record_id: String,
    pub branches: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Branches {
    pub branches: Vec<String>,
}

pub fn branch(ws: &Workspace, id: &PipelineId, req: &BranchRequest) -> OpResult<Mutation<Branches>> {
    let m = commit(ws, id, |p| p.branch_builders(&req.design_record_id, &req.branches))?;
    Ok(Mutation {
        result: Branches { branches: m.result },
        notices: m.notices,
        revision: m.revision,
        events: m.events,
    })
}

// ---------------------------------------------------------------------------
// Stages and findings

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct BeginStageRequest {
    #[serde(deserialize_with = "de_parse")]
    pub stage: Stage,
    pub tool: String,
    #[serde(default = "default_tool_type", deserialize_with = "de_parse")]
    pub tool_type: ToolType,
    #[serde(default)]
    pub context_mechanism: Option<String>,
    pub package_id: String,
    #[serde(default = "main_branch")]
    pub branch: String,
}

pub fn begin_stage(ws: &Workspace, id: &PipelineId, req: &BeginStageRequest) -> OpResult<Mutation<StageRecord>> {
    let mut tool = ToolDescriptor::new(req.tool.clone(), req.tool_type);
    if let Some(m) = req.context_mechanism.as_ref().filter(|m| !m.trim().is_empty()) {
        tool.context_mechanism = m.clone();
    }
    commit(ws, id, |p| p.begin_stage(req.stage, tool, &req.package_id, &req.branch))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CompleteStageRequest {
    pub output_artifact: String,
    #[serde(default, deserialize_with = "de_parse_opt")]
    pub cross_tool_pattern: Option<CrossToolPattern>,
}

pub fn complete_stage(
    ws: &Workspace,
    id: &PipelineId,
    record_id: &str,
    req: &CompleteStageRequest,
) -> OpResult<Mutation<StageRecord>> {
    commit(ws, id, |p| p.complete_stage(record_id, &req.output_artifact, req.cross_tool_pattern))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct SkipStageRequest {
    #[serde(deserialize_with = "de_parse")]
    pub stage: Stage,
    pub reason: String,
    #[serde(default = "main_branch")]
    pub branch: String,
}

pub fn skip_stage(ws: &Workspace, id: &PipelineId, req: &SkipStageRequest) -> OpResult<Mutation<StageRecord>> {
    commit(ws, id, |p| p.skip_stage(req.stage, &req.reason, &req.branch))
}

pub fn list_records(ws: &Workspace, id: &PipelineId) -> OpResult<Vec<StageRecord>> {
    Ok(ws.load(id)?.records)
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct FindingRequest {
    #[serde(default = "main_branch")]
    pub branch: String,
    /// Assigned as `F-<n>` when absent.
    #[serde(default)]
    pub finding_id: Option<String>,
    #[serde(deserialize_with = "de_parse")]
    pub severity: FindingSeverity,
    #[serde(deserialize_with = "de_parse")]
    pub category: FindingCategory,
    pub description: String,
}

pub fn record_finding(ws: &Workspace, id: &PipelineId, req: &FindingRequest) -> OpResult<Mutation<IterationRoute>> {
    commit(ws, id, |p| {
        let finding_id = req.finding_id.clone().unwrap_or_else(|| p.next_finding_id());
        p.record_finding(
            &req.branch,
            AuditFinding {
                finding_id,
                severity: req.severity,
                category: req.category,
                description: req.description.clone(),
            },
        )
    })
}

pub fn list_findings(ws: &Workspace, id: &PipelineId) -> OpResult<Vec<RecordedFinding>> {
    Ok(ws.load(id)?.findings)
}

#[derive(Debug, Clone, Serialize)]
pub struct RoutePreview {
    pub category: FindingCategory,
    pub target_stage: Stage,
}

pub fn route_preview(category: &str) -> OpResult<RoutePreview> {
    let category: FindingCategory = category
        .parse()
        .map_err(|e: ctxpipe_core::error::ParseEnumError| OpError::invalid("BAD_REQUEST", e.to_string()))?;
    Ok(RoutePreview {
        category,
        target_stage: route_for(category),
    })
}

// ---------------------------------------------------------------------------
// Packages

#[derive(Debug, Clone, Serialize)]
pub struct PackageReport {
    pub package_id: String,
    pub pipeline_id: PipelineId,
    pub stage: Stage,
    pub total_tokens: u64,
    pub size_class: SizeClass,
    /// Element ids ordered by role priority.
    pub by_priority: Vec<String>,
    pub findings: Vec<PackageFinding>,
}

impl PackageReport {
    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }
}

pub fn package_report(pkg: &ContextPackage) -> PackageReport {
    PackageReport {
        package_id: pkg.package_id.clone(),
        pipeline_id: pkg.pipeline_id.clone(),
        stage: pkg.stage,
        total_tokens: pkg.total_tokens(),
        size_class: roles::classify_size(pkg),
        by_priority: pkg.by_priority().into_iter().map(|e| e.element_id.clone()).collect(),
        findings: roles::validate_package(pkg),
    }
}

pub fn parse_manifest(text: &str) -> OpResult<ContextPackage> {
    Ok(roles::parse_manifest(text)?)
}

/// Accept a manifest given either as a JSON object or as manifest text.
pub fn manifest_from_value(value: serde_json::Value) -> OpResult<ContextPackage> {
    match value {
        serde_json::Value::String(text) => parse_manifest(&text),
        other => parse_manifest(&other.to_string()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Attached {
    pub package_id: String,
    pub pipeline_id: PipelineId,
    /// False when an identical package was already attached.
    pub attached: bool,
    pub report: PackageReport,
}

pub fn add_package(ws: &Workspace, pkg: ContextPackage) -> OpResult<Mutation<Attached>> {
    let report = package_report(&pkg);
    let id = pkg.pipeline_id.clone();
    let package_id = pkg.package_id.clone();
    let m = commit(ws, &id, |p| p.attach_package(pkg))?;
    Ok(Mutation {
        result: Attached {
            package_id,
            pipeline_id: id,
            attached: m.result,
            report,
        },
        notices: m.notices,
        revision: m.revision,
        events: m.events,
    })
}

pub fn get_package(ws: &Workspace, id: &PipelineId, package_id: &str) -> OpResult<(ContextPackage, PackageReport)> {
    let p = ws.load(id)?;
    let pkg = p
        .packages
        .get(package_id)
        .cloned()
        .ok_or_else(|| OpError::from(EngineError::UnknownPackage(package_id.to_string())))?;
    let report = package_report(&pkg);
    Ok((pkg, report))
}

/// Elements to compare: from an inline manifest or an attached package.
#[derive(Debug, Clone, Deserialize)]
pub struct ResolveRequest {
    #[serde(default)]
    pub manifest: Option<serde_json::Value>,
    #[serde(default)]
    pub pipeline_id: Option<String>,
    #[serde(default)]
    pub package_id: Option<String>,
    pub a: String,
    pub b: String,
}

pub fn resolve(ws: Option<&Workspace>, req: ResolveRequest) -> OpResult<ConflictResolution> {
    let pkg = match (req.manifest, req.pipeline_id, req.package_id) {
        (Some(m), _, _) => manifest_from_value(m)?,
        (None, Some(pid), Some(pkg)) => {
            let ws = ws.ok_or_else(|| OpError::invalid("BAD_REQUEST", "no workspace to look the package up in"))?;
            get_package(ws, &parse_pipeline_id(&pid)?, &pkg)?.0
        }
        _ => {
            return Err(OpError::invalid(
                "BAD_REQUEST",
                "give either a manifest or both pipeline_id and package_id",
            ))
        }
    };
    resolve_in(&pkg, &req.a, &req.b)
}

pub fn resolve_in(pkg: &ContextPackage, a: &str, b: &str) -> OpResult<ConflictResolution> {
    let find = |id: &str| pkg.element(id).ok_or_else(|| PackageError::UnknownElement(id.to_string()));
    Ok(roles::resolve_conflict(find(a)?, find(b)?)?)
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ClassifyRequest {
    #[serde(default)]
    pub tokens: Option<u64>,
    #[serde(default)]
    pub manifest: Option<serde_json::Value>,
    /// Raw content; tokens are estimated from its byte length.
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub total_tokens: u64,
    pub size_class: SizeClass,
}

pub fn classify(req: ClassifyRequest) -> OpResult<Classification> {
    let total_tokens = match (req.tokens, req.manifest, req.text) {
        (Some(t), None, None) => t,
        (None, Some(m), None) => manifest_from_value(m)?.total_tokens(),
        (None, None, Some(text)) => roles::estimate_tokens(text.as_bytes()),
        _ => {
            return Err(OpError::invalid(
                "BAD_REQUEST",
                "give exactly one of tokens, manifest or text",
            ))
        }
    };
    Ok(Classification {
        total_tokens,
        size_class: SizeClass::from_tokens(total_tokens),
    })
}

// ---------------------------------------------------------------------------
// Templates

#[derive(Debug, Clone, Serialize)]
pub struct TypeSummary {
    pub name: String,
    pub builtin: bool,
    pub stages: Vec<Stage>,
    pub evidence_note: String,
}

pub fn list_types(ws: &Workspace) -> OpResult<Vec<TypeSummary>> {
    ws.list_types()?
        .into_iter()
        .map(|name| {
            let ty = ws.pipeline_type(&name)?;
            Ok(TypeSummary {
                builtin: template::BUILTIN_TYPE_NAMES.contains(&name.as_str()),
                stages: ty.templates.keys().copied().collect(),
                evidence_note: ty.evidence_note,
                name,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TemplateDoc {
    pub stage: Stage,
    pub text: String,
}

pub fn get_templates(ws: &Workspace, type_name: &str) -> OpResult<Vec<TemplateDoc>> {
    let ty = ws.pipeline_type(type_name)?;
    Ok(ty
        .templates
        .iter()
        .map(|(stage, t)| TemplateDoc {
            stage: *stage,
            text: template::render_template(t),
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct Exported {
    pub type_name: String,
    pub paths: Vec<String>,
}

/// Write a type's templates under `templates/<type>/`.
pub fn export_templates(ws: &Workspace, type_name: &str) -> OpResult<Exported> {
    let ty = ws.pipeline_type(type_name)?;
    let paths = ws.write_templates(type_name, &ty.templates)?;
    Ok(Exported {
        type_name: type_name.to_string(),
        paths: paths.iter().map(|p| p.display().to_string()).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TemplateReport {
    pub valid: bool,
    pub stage: Option<Stage>,
    pub findings: Vec<PackageFinding>,
}

pub fn validate_template_text(text: &str) -> OpResult<TemplateReport> {
    let t = template::parse_template(text).map_err(template_errors)?;
    let findings = template::validate_template(&t);
    Ok(TemplateReport {
        valid: !findings.iter().any(|f| f.severity == Severity::Error),
        stage: t.stage(),
        findings,
    })
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct InstantiateRequest {
    pub type_name: String,
    pub project: String,
    pub domain: String,
    /// Defaults to today (UTC).
    #[serde(default)]
    pub date: Option<NaiveDate>,
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Instantiated {
    pub pipeline_id: PipelineId,
    pub templates: Vec<TemplateDoc>,
}

pub fn instantiate(ws: &Workspace, req: &InstantiateRequest) -> OpResult<(Instantiated, BTreeMap<Stage, StageTemplate>)> {
    let ty = ws.pipeline_type(&req.type_name)?;
    let date = req.date.unwrap_or_else(|| chrono::Utc::now().date_naive());
    let filled = template::instantiate(&ty, &req.project, &req.domain, date, &req.overrides)?;
    let pipeline_id = PipelineId::new(&req.project, &req.domain)
        .map_err(|e| OpError::invalid("BAD_SEGMENT", e.to_string()))?;
    let templates = filled
        .iter()
        .map(|(stage, t)| TemplateDoc {
            stage: *stage,
            text: template::render_template(t),
        })
        .collect();
    Ok((Instantiated { pipeline_id, templates }, filled))
}

// ---------------------------------------------------------------------------
// Datasets

#[derive(Debug, Clone, Serialize)]
pub struct Imported {
    pub name: String,
    pub records: usize,
    pub lints: Vec<DatasetLint>,
    pub path: String,
}

pub fn import_dataset(ws: &Workspace, name: &str, ds: Dataset) -> OpResult<Imported> {
    let path = ws.save_dataset(name, &ds.records)?;
    Ok(Imported {
        name: name.to_string(),
        records: ds.records.len(),
        lints: ds.lints,
        path: path.display().to_string(),
    })
}

/// Body of an HTTP import: records inline.
#[derive(Debug, Clone, Deserialize)]
pub struct ImportRequest {
    pub name: String,
    pub records: Vec<serde_json::Value>,
}

pub fn import_values(ws: &Workspace, req: ImportRequest) -> OpResult<Imported> {
    let ds = dataset::parse_values(req.records).map_err(|e| OpError::from(StoreError::Dataset(e)))?;
    import_dataset(ws, &req.name, ds)
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub records: usize,
}

pub fn list_datasets(ws: &Workspace) -> OpResult<Vec<DatasetSummary>> {
    ws.list_datasets()?
        .into_iter()
        .map(|name| {
            let records = ws.load_dataset(&name)?.len();
            Ok(DatasetSummary { name, records })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Quality,
    Authority,
    Size,
    Stages,
}

impl FromStr for ReportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quality" => Ok(ReportKind::Quality),
            "authority" => Ok(ReportKind::Authority),
            "size" => Ok(ReportKind::Size),
            "stages" => Ok(ReportKind::Stages),
            other => Err(format!("unknown report '{other}' (quality, authority, size, stages)")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReportRequest {
    pub dataset: String,
    #[serde(deserialize_with = "de_parse")]
    pub kind: ReportKind,
    #[serde(default, deserialize_with = "de_parse_opt")]
    pub group_by: Option<GroupBy>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Report {
    Quality { dataset: String, table: QualityTable },
    Authority { dataset: String, rows: Vec<AuthorityRow> },
    Size { dataset: String, table: SizeTable },
    Stages { dataset: String, presence: BTreeMap<Stage, f64> },
}

pub fn dataset_report(ws: &Workspace, req: &ReportRequest) -> OpResult<Report> {
    let records = ws.load_dataset(&req.dataset)?;
    let dataset = req.dataset.clone();
    Ok(match req.kind {
        ReportKind::Quality => Report::Quality {
            dataset,
            table: dataset::aggregate_quality(&records, req.group_by.unwrap_or(GroupBy::Tool))?,
        },
        ReportKind::Authority => Report::Authority {
            dataset,
            rows: dataset::authority_breakdown(&records),
        },
        ReportKind::Size => Report::Size {
            dataset,
            table: dataset::size_breakdown(&records, |r| r.context_tokens),
        },
        ReportKind::Stages => Report::Stages {
            dataset,
            presence: dataset::stage_presence(&records)?,
        },
    })
}

// ---------------------------------------------------------------------------
// Estimators

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum EstimateRequest {
    Lp { n1: u64, n2: u64, m: u64 },
    Chapman { n1: u64, n2: u64, m: u64 },
    Nversion { p: Vec<f64> },
    Ib { i_xt: f64, i_ty: f64, beta: f64 },
    Boehm { c0: f64, phase: u32 },
    Wright { c1: f64, n: u64, rate: f64 },
}

pub const ESTIMATOR_MODELS: [&str; 6] = ["lp", "chapman", "nversion", "ib", "boehm", "wright"];

#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub model: String,
    pub value: f64,
    pub formula: String,
}

pub fn estimate(req: &EstimateRequest) -> OpResult<Estimate> {
    let (model, value, formula) = match *req {
        EstimateRequest::Lp { n1, n2, m } => (
            "lp",
            estimators::lincoln_petersen(CaptureRecapture::new(n1, n2, m)?)?,
            "N = n1*n2/m".to_string(),
        ),
        EstimateRequest::Chapman { n1, n2, m } => (
            "chapman",
            estimators::chapman(CaptureRecapture::new(n1, n2, m)?),
            "N = (n1+1)(n2+1)/(m+1) - 1".to_string(),
        ),
        EstimateRequest::Nversion { ref p } => (
            "nversion",
            estimators::n_version_detection(p)?,
            "P = 1 - prod(1 - p_i)".to_string(),
        ),
        EstimateRequest::Ib { i_xt, i_ty, beta } => (
            "ib",
            estimators::ib_objective(IbInputs { i_xt, i_ty, beta })?,
            "L = I(X;T) - beta*I(T;Y)".to_string(),
        ),
        EstimateRequest::Boehm { c0, phase } => (
            "boehm",
            estimators::boehm_cost(c0, phase)?,
            "C = c0 * 10^(phase/2)".to_string(),
        ),
        EstimateRequest::Wright { c1, n, rate } => (
            "wright",
            estimators::wright_cost(c1, n, rate)?,
            format!("C = c1 * n^b, b = log2({rate}) = {:.4}", estimators::learning_exponent(rate)?),
        ),
    };
    Ok(Estimate {
        model: model.to_string(),
        value,
        formula,
    })
}

// ---------------------------------------------------------------------------
// Trail

pub fn trail_events(ws: &Workspace, id: &PipelineId) -> OpResult<Vec<TrailEvent>> {
    if !ws.exists(id) {
        return Err(StoreError::UnknownPipeline(id.clone()).into());
    }
    Ok(ws.trail(id).read()?)
}

pub fn trail_verify(ws: &Workspace, id: &PipelineId) -> OpResult<Verification> {
    if !ws.exists(id) {
        return Err(StoreError::UnknownPipeline(id.clone()).into());
    }
    Ok(ws.trail(id).verify()?)
}

pub fn trail_render(ws: &Workspace, id: &PipelineId) -> OpResult<String> {
    Ok(trail::render_trail(id, &trail_events(ws, id)?))
}
