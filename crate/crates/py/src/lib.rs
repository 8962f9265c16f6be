//! Python bindings. Structured results cross the boundary as plain dicts and
//! lists built from the same JSON shapes the CLI and HTTP API emit.

use std::path::PathBuf;

use ctxpipe::ops::{self, ErrorClass, OpError};
use ctxpipe_core::dataset::{self, GroupBy};
use ctxpipe_core::estimators::{self, CaptureRecapture, IbInputs};
use ctxpipe_core::roles::{self, ContextRole, SizeClass};
use ctxpipe_core::trail::{parse_trail, verify_bytes, TrailEvent};
use ctxpipe_core::workspace::{read_dataset_source, Workspace as CoreWorkspace};
use ctxpipe_core::{
    AuditFinding, ContextPackage, Notice, Pipeline as CorePipeline, PipelineEvent, PipelineId, Scale, Stage,
    ToolDescriptor, ToolType,
};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(ctxpipe, CtxpipeError, PyException, "Base class for ctxpipe errors.");
create_exception!(ctxpipe, ValidationError, CtxpipeError, "Malformed input.");
create_exception!(ctxpipe, RuleViolation, CtxpipeError, "A pipeline rule rejected the operation.");
create_exception!(ctxpipe, NotFoundError, CtxpipeError, "Unknown pipeline, record, package or dataset.");
create_exception!(ctxpipe, ConflictError, CtxpipeError, "State conflict, such as a duplicate id.");
create_exception!(ctxpipe, BusyError, CtxpipeError, "Another writer holds the lock; retry.");

fn raise(py: Python<'_>, e: OpError) -> PyErr {
    let text = e.to_string();
    let err = match e.class {
        ErrorClass::Invalid => ValidationError::new_err(text),
        ErrorClass::Rule => RuleViolation::new_err(text),
        ErrorClass::NotFound => NotFoundError::new_err(text),
        ErrorClass::Conflict => ConflictError::new_err(text),
        ErrorClass::Busy => BusyError::new_err(text),
        ErrorClass::Unauthorized | ErrorClass::Internal => CtxpipeError::new_err(text),
    };
    let value = err.value(py);
    let _ = value.setattr("code", e.code);
    let _ = value.setattr("rule", e.rule);
    err
}

trait OrRaise<T> {
    fn or_raise(self, py: Python<'_>) -> PyResult<T>;
}

impl<T, E: Into<OpError>> OrRaise<T> for Result<T, E> {
    fn or_raise(self, py: Python<'_>) -> PyResult<T> {
        self.map_err(|e| raise(py, e.into()))
    }
}

fn to_py<T: Serialize + ?Sized>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| CtxpipeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| raise(py, OpError::invalid("BAD_REQUEST", e.to_string())))
}

fn parse<T: std::str::FromStr>(py: Python<'_>, s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| raise(py, OpError::invalid("BAD_REQUEST", e.to_string())))
}

fn pid(py: Python<'_>, s: &str) -> PyResult<PipelineId> {
    ops::parse_pipeline_id(s).or_raise(py)
}

// ---------------------------------------------------------------------------
// Packages

/// A parsed context package manifest.
#[pyclass(module = "ctxpipe", frozen)]
pub struct Package {
    inner: ContextPackage,
}

#[pymethods]
impl Package {
    /// Parse manifest text (JSON).
    #[staticmethod]
    fn parse(py: Python<'_>, text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ops::parse_manifest(text).or_raise(py)?,
        })
    }

    #[staticmethod]
    fn from_dict(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<Self> {
        let v: serde_json::Value = from_py(py, value)?;
        Ok(Self {
            inner: ops::manifest_from_value(v).or_raise(py)?,
        })
    }

    /// Canonical manifest text.
    fn render(&self) -> String {
        roles::render_manifest(&self.inner)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn package_id(&self) -> &str {
        &self.inner.package_id
    }

    #[getter]
    fn pipeline_id(&self) -> String {
        self.inner.pipeline_id.to_string()
    }

    #[getter]
    fn stage(&self) -> &'static str {
        self.inner.stage.name()
    }

    #[getter]
    fn total_tokens(&self) -> u64 {
        self.inner.total_tokens()
    }

    #[getter]
    fn size_class(&self) -> &'static str {
        roles::classify_size(&self.inner).name()
    }

    /// Lint findings as dicts with severity, code and message.
    fn validate(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &roles::validate_package(&self.inner))
    }

    /// Resolve a declared conflict between two element ids.
    fn resolve(&self, py: Python<'_>, a: &str, b: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &ops::resolve_in(&self.inner, a, b).or_raise(py)?)
    }

    fn __repr__(&self) -> String {
        format!(
            "Package({:?}, pipeline={}, stage={}, elements={})",
            self.inner.package_id,
            self.inner.pipeline_id,
            self.inner.stage,
            self.inner.elements.len()
        )
    }
}

// ---------------------------------------------------------------------------
// In-memory pipeline

/// The stage-gated state machine without a workspace. Every accepted
/// operation appends to `events`; `Pipeline.replay(events)` rebuilds state.
#[pyclass(module = "ctxpipe")]
pub struct Pipeline {
    inner: CorePipeline,
    log: Vec<PipelineEvent>,
}

impl Pipeline {
    fn apply<T: Serialize>(
        &mut self,
        py: Python<'_>,
        op: impl FnOnce(&mut CorePipeline) -> Result<ctxpipe_core::pipeline::Transition<T>, ctxpipe_core::EngineError>,
    ) -> PyResult<Py<PyAny>> {
        let t = op(&mut self.inner).or_raise(py)?;
        self.log.extend(t.events);
        to_py(py, &Outcome { value: t.value, notices: t.notices })
    }
}

#[derive(Serialize)]
struct Outcome<T> {
    value: T,
    notices: Vec<Notice>,
}

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (project, domain, scale = "task"))]
    fn new(py: Python<'_>, project: &str, domain: &str, scale: &str) -> PyResult<Self> {
        let scale: Scale = parse(py, scale)?;
        let t = CorePipeline::create(project, domain, scale).or_raise(py)?;
        Ok(Self {
            inner: t.value,
            log: t.events,
        })
    }

    /// Rebuild a pipeline from the list returned by `events`.
    #[staticmethod]
    fn replay(py: Python<'_>, events: &Bound<'_, PyAny>) -> PyResult<Self> {
        let log: Vec<PipelineEvent> = from_py(py, events)?;
        let inner = CorePipeline::replay(log.iter()).or_raise(py)?;
        Ok(Self { inner, log })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.to_string()
    }

    #[getter]
    fn revision(&self) -> u64 {
        self.inner.revision
    }

    #[getter]
    fn closed(&self) -> bool {
        self.inner.is_closed()
    }

    fn state(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    fn events(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.log)
    }

    fn attach_package(&mut self, py: Python<'_>, package: &Package) -> PyResult<Py<PyAny>> {
        let pkg = package.inner.clone();
        self.apply(py, |p| p.attach_package(pkg))
    }

    #[pyo3(signature = (stage, tool, package_id, branch = "main", tool_type = "generalist_llm"))]
    fn begin_stage(
        &mut self,
        py: Python<'_>,
        stage: &str,
        tool: &str,
        package_id: &str,
        branch: &str,
        tool_type: &str,
    ) -> PyResult<Py<PyAny>> {
        let stage: Stage = parse(py, stage)?;
        let tool = ToolDescriptor::new(tool, parse::<ToolType>(py, tool_type)?);
        self.apply(py, |p| p.begin_stage(stage, tool, package_id, branch))
    }

    #[pyo3(signature = (record_id, output_artifact, cross_tool_pattern = None))]
    fn complete_stage(
        &mut self,
        py: Python<'_>,
        record_id: &str,
        output_artifact: &str,
        cross_tool_pattern: Option<&str>,
    ) -> PyResult<Py<PyAny>> {
        let pattern = cross_tool_pattern.map(|s| parse(py, s)).transpose()?;
        self.apply(py, |p| p.complete_stage(record_id, output_artifact, pattern))
    }

    #[pyo3(signature = (stage, reason, branch = "main"))]
    fn skip_stage(&mut self, py: Python<'_>, stage: &str, reason: &str, branch: &str) -> PyResult<Py<PyAny>> {
        let stage: Stage = parse(py, stage)?;
        self.apply(py, |p| p.skip_stage(stage, reason, branch))
    }

    #[pyo3(signature = (severity, category, description, branch = "main", finding_id = None))]
    fn record_finding(
        &mut self,
        py: Python<'_>,
        severity: &str,
        category: &str,
        description: &str,
        branch: &str,
        finding_id: Option<String>,
    ) -> PyResult<Py<PyAny>> {
        let finding = AuditFinding {
            finding_id: finding_id.unwrap_or_else(|| self.inner.next_finding_id()),
            severity: parse(py, severity)?,
            category: parse(py, category)?,
            description: description.to_string(),
        };
        self.apply(py, |p| p.record_finding(branch, finding))
    }

    fn branch(&mut self, py: Python<'_>, design_record_id: &str, names: Vec<String>) -> PyResult<Py<PyAny>> {
        self.apply(py, |p| p.branch_builders(design_record_id, &names))
    }

    /// Warnings that closing now would produce.
    fn close_check(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.close_check().or_raise(py)?)
    }

    fn close(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        self.apply(py, |p| p.close())
    }

    fn __repr__(&self) -> String {
        format!(
            "Pipeline({}, scale={}, records={}, revision={})",
            self.inner.id,
            self.inner.scale,
            self.inner.records.len(),
            self.inner.revision
        )
    }
}

// ---------------------------------------------------------------------------
// Workspace

/// A workspace directory, the same one the CLI and server use.
#[pyclass(module = "ctxpipe", frozen)]
pub struct Workspace {
    inner: CoreWorkspace,
}

#[pymethods]
impl Workspace {
    #[new]
    fn open(py: Python<'_>, path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreWorkspace::open(path).or_raise(py)?,
        })
    }

    /// Create (or reopen) a workspace at `path`.
    #[staticmethod]
    fn init(py: Python<'_>, path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreWorkspace::init(path).or_raise(py)?,
        })
    }

    #[getter]
    fn root(&self) -> PathBuf {
        self.inner.root().to_path_buf()
    }

    fn pipelines(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &ops::list_pipelines(&self.inner).or_raise(py)?)
    }

    fn create_pipeline(&self, py: Python<'_>, project: &str, domain: &str, scale: &str) -> PyResult<String> {
        let req = ops::CreatePipelineRequest {
            project: project.to_string(),
            domain: domain.to_string(),
            scale: parse(py, scale)?,
        };
        Ok(ops::create_pipeline(&self.inner, &req).or_raise(py)?.result.pipeline_id.to_string())
    }

    /// Lanes, findings and close status for one pipeline.
    fn status(&self, py: Python<'_>, pipeline_id: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &ops::pipeline_view(&self.inner, &pid(py, pipeline_id)?).or_raise(py)?)
    }

    /// Load the pipeline as an in-memory object (replayed from its trail).
    fn pipeline(&self, py: Python<'_>, pipeline_id: &str) -> PyResult<Pipeline> {
        let id = pid(py, pipeline_id)?;
        let (inner, trail) = self.inner.load_with_trail(&id).or_raise(py)?;
        let log = trail.iter().map(TrailEvent::to_event).collect::<Result<Vec<_>, _>>().or_raise(py)?;
        Ok(Pipeline { inner, log })
    }

    fn add_package(&self, py: Python<'_>, package: &Package) -> PyResult<Py<PyAny>> {
        to_py(py, &ops::add_package(&self.inner, package.inner.clone()).or_raise(py)?)
    }

    #[pyo3(signature = (pipeline_id, stage, tool, package_id, branch = "main", tool_type = "generalist_llm"))]
    #[allow(clippy::too_many_arguments)]
    fn begin_stage(
        &self,
        py: Python<'_>,
        pipeline_id: &str,
        stage: &str,
        tool: &str,
        package_id: &str,
        branch: &str,
        tool_type: &str,
    ) -> PyResult<Py<PyAny>> {
        let req = ops::BeginStageRequest {
            stage: parse(py, stage)?,
            tool: tool.to_string(),
            tool_type: parse(py, tool_type)?,
            context_mechanism: None,
            package_id: package_id.to_string(),
            branch: branch.to_string(),
        };
        to_py(py, &ops::begin_stage(&self.inner, &pid(py, pipeline_id)?, &req).or_raise(py)?)
    }

    #[pyo3(signature = (pipeline_id, record_id, output_artifact, cross_tool_pattern = None))]
    fn complete_stage(
        &self,
        py: Python<'_>,
        pipeline_id: &str,
        record_id: &str,
        output_artifact: &str,
        cross_tool_pattern: Option<&str>,
    ) -> PyResult<Py<PyAny>> {
        let req = ops::CompleteStageRequest {
            output_artifact: output_artifact.to_string(),
            cross_tool_pattern: cross_tool_pattern.map(|s| parse(py, s)).transpose()?,
        };
        to_py(py, &ops::complete_stage(&self.inner, &pid(py, pipeline_id)?, record_id, &req).or_raise(py)?)
    }

    #[pyo3(signature = (pipeline_id, stage, reason, branch = "main"))]
    fn skip_stage(&self, py: Python<'_>, pipeline_id: &str, stage: &str, reason: &str, branch: &str) -> PyResult<Py<PyAny>> {
        let req = ops::SkipStageRequest {
            stage: parse(py, stage)?,
            reason: reason.to_string(),
            branch: branch.to_string(),
        };
        to_py(py, &ops::skip_stage(&self.inner, &pid(py, pipeline_id)?, &req).or_raise(py)?)
    }

    #[pyo3(signature = (pipeline_id, severity, category, description, branch = "main"))]
    fn record_finding(
        &self,
        py: Python<'_>,
        pipeline_id: &str,
        severity: &str,
        category: &str,
        description: &str,
        branch: &str,
    ) -> PyResult<Py<PyAny>> {
        let req: ops::FindingRequest = ops::decode(serde_json::json!({
            "branch": branch,
            "severity": severity,
            "category": category,
            "description": description,
        }))
        .or_raise(py)?;
        to_py(py, &ops::record_finding(&self.inner, &pid(py, pipeline_id)?, &req).or_raise(py)?)
    }

    fn branch(&self, py: Python<'_>, pipeline_id: &str, design_record_id: &str, names: Vec<String>) -> PyResult<Py<PyAny>> {
        let req = ops::BranchRequest {
            design_record_id: design_record_id.to_string(),
            branches: names,
        };
        to_py(py, &ops::branch(&self.inner, &pid(py, pipeline_id)?, &req).or_raise(py)?)
    }

    /// Close a pipeline. Sprint pipelines missing an auditor need `confirm=True`.
    #[pyo3(signature = (pipeline_id, confirm = false))]
    fn close(&self, py: Python<'_>, pipeline_id: &str, confirm: bool) -> PyResult<Py<PyAny>> {
        let req = ops::CloseRequest { confirm };
        to_py(py, &ops::close_pipeline(&self.inner, &pid(py, pipeline_id)?, &req).or_raise(py)?)
    }

    fn trail(&self, py: Python<'_>, pipeline_id: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &ops::trail_events(&self.inner, &pid(py, pipeline_id)?).or_raise(py)?)
    }

    fn verify_trail(&self, py: Python<'_>, pipeline_id: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &ops::trail_verify(&self.inner, &pid(py, pipeline_id)?).or_raise(py)?)
    }

    fn render_trail(&self, py: Python<'_>, pipeline_id: &str) -> PyResult<String> {
        ops::trail_render(&self.inner, &pid(py, pipeline_id)?).or_raise(py)
    }

    /// Import a combined JSON file or a directory of record files.
    #[pyo3(signature = (path, name = None))]
    fn import_dataset(&self, py: Python<'_>, path: PathBuf, name: Option<String>) -> PyResult<Py<PyAny>> {
        let name = match name.or_else(|| path.file_stem().and_then(|s| s.to_str()).map(str::to_string)) {
            Some(n) => n,
            None => return Err(raise(py, OpError::invalid("BAD_NAME", "cannot derive a dataset name"))),
        };
        let ds = read_dataset_source(&path).or_raise(py)?;
        to_py(py, &ops::import_dataset(&self.inner, &name, ds).or_raise(py)?)
    }

    /// `kind` is one of quality, authority, size, stages.
    #[pyo3(signature = (dataset, kind, group_by = None))]
    fn report(&self, py: Python<'_>, dataset: &str, kind: &str, group_by: Option<&str>) -> PyResult<Py<PyAny>> {
        let req = ops::ReportRequest {
            dataset: dataset.to_string(),
            kind: parse(py, kind)?,
            group_by: group_by.map(|g| parse(py, g)).transpose()?,
        };
        to_py(py, &ops::dataset_report(&self.inner, &req).or_raise(py)?)
    }

    fn template_types(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &ops::list_types(&self.inner).or_raise(py)?)
    }

    /// Instantiate a type's templates; returns `{stage: markdown}`.
    #[pyo3(signature = (type_name, project, domain, date = None, overrides = None))]
    fn instantiate(
        &self,
        py: Python<'_>,
        type_name: &str,
        project: &str,
        domain: &str,
        date: Option<&str>,
        overrides: Option<std::collections::BTreeMap<String, String>>,
    ) -> PyResult<Py<PyAny>> {
        let req = ops::InstantiateRequest {
            type_name: type_name.to_string(),
            project: project.to_string(),
            domain: domain.to_string(),
            date: date.map(|d| parse::<chrono::NaiveDate>(py, d)).transpose()?,
            overrides: overrides.unwrap_or_default(),
        };
        let (out, _) = ops::instantiate(&self.inner, &req).or_raise(py)?;
        let docs: std::collections::BTreeMap<&str, &str> =
            out.templates.iter().map(|d| (d.stage.name(), d.text.as_str())).collect();
        to_py(py, &docs)
    }

    fn __repr__(&self) -> String {
        format!("Workspace({:?})", self.inner.root())
    }
}

// ---------------------------------------------------------------------------
// Free functions

#[pyfunction]
fn priority_of(py: Python<'_>, role: &str) -> PyResult<u8> {
    Ok(roles::priority_of(parse::<ContextRole>(py, role)?))
}

/// Size class name for a token total.
#[pyfunction]
fn classify_tokens(total: u64) -> &'static str {
    SizeClass::from_tokens(total).name()
}

#[pyfunction]
fn estimate_tokens(content: &[u8]) -> u64 {
    roles::estimate_tokens(content)
}

/// Stage a finding category is routed back to.
#[pyfunction]
fn route_for(py: Python<'_>, category: &str) -> PyResult<&'static str> {
    Ok(ctxpipe_core::pipeline::route_for(parse(py, category)?).name())
}

#[pyfunction]
fn lincoln_petersen(py: Python<'_>, n1: u64, n2: u64, m: u64) -> PyResult<f64> {
    estimators::lincoln_petersen(CaptureRecapture::new(n1, n2, m).or_raise(py)?).or_raise(py)
}

#[pyfunction]
fn chapman(py: Python<'_>, n1: u64, n2: u64, m: u64) -> PyResult<f64> {
    Ok(estimators::chapman(CaptureRecapture::new(n1, n2, m).or_raise(py)?))
}

#[pyfunction]
fn n_version_detection(py: Python<'_>, probabilities: Vec<f64>) -> PyResult<f64> {
    estimators::n_version_detection(&probabilities).or_raise(py)
}

#[pyfunction]
fn ib_objective(py: Python<'_>, i_xt: f64, i_ty: f64, beta: f64) -> PyResult<f64> {
    estimators::ib_objective(IbInputs { i_xt, i_ty, beta }).or_raise(py)
}

#[pyfunction]
fn boehm_cost(py: Python<'_>, c0: f64, phase: u32) -> PyResult<f64> {
    estimators::boehm_cost(c0, phase).or_raise(py)
}

#[pyfunction]
fn wright_cost(py: Python<'_>, c1: f64, n: u64, learning_rate: f64) -> PyResult<f64> {
    estimators::wright_cost(c1, n, learning_rate).or_raise(py)
}

/// Check a trail file's bytes; returns `{"status": "Ok"|"Broken", ...}`.
#[pyfunction]
fn verify_trail(py: Python<'_>, data: &[u8]) -> PyResult<Py<PyAny>> {
    to_py(py, &verify_bytes(data))
}

/// Parsed trail events from raw bytes.
#[pyfunction]
fn read_trail(py: Python<'_>, data: &[u8]) -> PyResult<Py<PyAny>> {
    to_py(py, &parse_trail(data).or_raise(py)?)
}

/// Parse and lint one template document.
#[pyfunction]
fn validate_template(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &ops::validate_template_text(text).or_raise(py)?)
}

/// Quality table for dataset JSON text (a list of records or one record).
#[pyfunction]
#[pyo3(signature = (text, group_by = "tool"))]
fn quality_report(py: Python<'_>, text: &str, group_by: &str) -> PyResult<Py<PyAny>> {
    let ds = dataset::parse_dataset(text)
        .map_err(|errs| raise(py, ctxpipe_core::workspace::StoreError::Dataset(errs).into()))?;
    let table = dataset::aggregate_quality(&ds.records, parse::<GroupBy>(py, group_by)?)
        .map_err(|e| raise(py, ctxpipe_core::workspace::StoreError::Dataset(vec![e]).into()))?;
    to_py(py, &table)
}

#[pymodule]
#[pyo3(name = "ctxpipe")]
pub fn ctxpipe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("CtxpipeError", py.get_type::<CtxpipeError>())?;
    m.add("ValidationError", py.get_type::<ValidationError>())?;
    m.add("RuleViolation", py.get_type::<RuleViolation>())?;
    m.add("NotFoundError", py.get_type::<NotFoundError>())?;
    m.add("ConflictError", py.get_type::<ConflictError>())?;
    m.add("BusyError", py.get_type::<BusyError>())?;
    m.add_class::<Package>()?;
    m.add_class::<Pipeline>()?;
    m.add_class::<Workspace>()?;
    m.add_function(wrap_pyfunction!(priority_of, m)?)?;
    m.add_function(wrap_pyfunction!(classify_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(route_for, m)?)?;
    m.add_function(wrap_pyfunction!(lincoln_petersen, m)?)?;
    m.add_function(wrap_pyfunction!(chapman, m)?)?;
    m.add_function(wrap_pyfunction!(n_version_detection, m)?)?;
    m.add_function(wrap_pyfunction!(ib_objective, m)?)?;
    m.add_function(wrap_pyfunction!(boehm_cost, m)?)?;
    m.add_function(wrap_pyfunction!(wright_cost, m)?)?;
    m.add_function(wrap_pyfunction!(verify_trail, m)?)?;
    m.add_function(wrap_pyfunction!(read_trail, m)?)?;
    m.add_function(wrap_pyfunction!(validate_template, m)?)?;
    m.add_function(wrap_pyfunction!(quality_report, m)?)?;
    m.add("STAGES", Stage::ALL.map(Stage::name).to_vec())?;
    Ok(())
}
