//! On-disk workspace: pipeline state and trails, templates and datasets.
//!
//! ```text
//! <root>/ctxpipe-workspace.json     {"schema_version": "1"}
//! <root>/pipelines/<id>/state       materialized pipeline (canonical JSON)
//! <root>/pipelines/<id>/trail.log   hash-chained event log
//! <root>/pipelines/<id>/artifacts/
//! <root>/templates/<type>/<stage>.md
//! <root>/datasets/<name>.json
//! ```
//!
//! The trail is the source of truth. A mutation appends to the trail first
//! and then rewrites `state`; if the process dies in between, the next load
//! rebuilds state from the trail. A mutation holds `pipelines/<id>/.lock`
//! for its duration; a second writer gets [`StoreError::Busy`].

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::to_canonical_pretty;
use crate::dataset::{self, DatasetError, InteractionRecord};
use crate::pipeline::{EngineError, Notice, Pipeline, Scale, Transition};
use crate::pipeline_id::PipelineId;
use crate::stage::Stage;
use crate::template::{self, render_template, LibraryError, PipelineType, StageTemplate};
use crate::trail::{decode_events, TrailError, TrailEvent, TrailFile};

pub const SCHEMA_VERSION: &str = "1";
pub const MARKER_FILE: &str = "ctxpipe-workspace.json";
const LOCK_FILE: &str = ".lock";
const SERVER_LOCK_FILE: &str = "server.lock";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("IO_ERROR: {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("NOT_A_WORKSPACE: {0} has no {MARKER_FILE}; run `ctxpipe init`")]
    NotWorkspace(PathBuf),
    #[error("SCHEMA_VERSION: workspace schema '{0}' is not supported (expected '{SCHEMA_VERSION}')")]
    SchemaVersion(String),
    #[error("UNKNOWN_PIPELINE: {0}")]
    UnknownPipeline(PipelineId),
    #[error("PIPELINE_EXISTS: {0}")]
    PipelineExists(PipelineId),
    #[error("BUSY: {0} is being modified by another writer; retry")]
    Busy(PipelineId),
    #[error("WORKSPACE_LOCKED: another server holds {0}")]
    ServerLocked(PathBuf),
    #[error("UNKNOWN_DATASET: {0}")]
    UnknownDataset(String),
    #[error("BAD_NAME: '{0}' may only contain letters, digits, '-' and '_'")]
    BadName(String),
    #[error("STATE_CORRUPT: {id}: {detail}")]
    Corrupt { id: PipelineId, detail: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Trail(#[from] TrailError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error("INVALID_DATASET: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Dataset(Vec<DatasetError>),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Io { .. } => "IO_ERROR",
            StoreError::NotWorkspace(_) => "NOT_A_WORKSPACE",
            StoreError::SchemaVersion(_) => "SCHEMA_VERSION",
            StoreError::UnknownPipeline(_) => "UNKNOWN_PIPELINE",
            StoreError::PipelineExists(_) => "PIPELINE_EXISTS",
            StoreError::Busy(_) => "BUSY",
            StoreError::ServerLocked(_) => "WORKSPACE_LOCKED",
            StoreError::UnknownDataset(_) => "UNKNOWN_DATASET",
            StoreError::BadName(_) => "BAD_NAME",
            StoreError::Corrupt { .. } => "STATE_CORRUPT",
            StoreError::Engine(e) => e.code(),
            StoreError::Trail(TrailError::Io(_)) => "IO_ERROR",
            StoreError::Trail(TrailError::Broken { .. }) => "TRAIL_BROKEN",
            StoreError::Trail(TrailError::Payload { .. }) => "TRAIL_PAYLOAD",
            StoreError::Library(e) => e.code(),
            StoreError::Dataset(_) => "INVALID_DATASET",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Marker {
    schema_version: String,
}

/// Held while a pipeline is being modified.
#[derive(Debug)]
pub struct PipelineLock {
    path: PathBuf,
}

impl Drop for PipelineLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Held by a running server for the life of the process.
#[derive(Debug)]
pub struct ServerLock {
    path: PathBuf,
}

impl Drop for ServerLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn create_lock_file(path: &Path) -> std::io::Result<()> {
    let mut f = OpenOptions::new().write(true).create_new(true).open(path)?;
    writeln!(f, "{}", std::process::id())
}

/// Outcome of a committed mutation.
#[derive(Debug, Clone)]
pub struct Committed<T> {
    pub value: T,
    pub notices: Vec<Notice>,
    pub events: Vec<TrailEvent>,
    pub pipeline: Pipeline,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Create the workspace skeleton. Re-running on an existing workspace is
    /// harmless.
    pub fn init(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let ws = Self { root: root.into() };
        let marker = ws.root.join(MARKER_FILE);
        if marker.exists() {
            return Self::open(ws.root);
        }
        for dir in [ws.pipelines_dir(), ws.templates_dir(), ws.datasets_dir()] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let body = to_canonical_pretty(&Marker {
            schema_version: SCHEMA_VERSION.into(),
        })
        .expect("marker serializes");
        write_atomic(&marker, body.as_bytes())?;
        Ok(ws)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let marker = root.join(MARKER_FILE);
        let text = match fs::read_to_string(&marker) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(StoreError::NotWorkspace(root)),
            Err(e) => return Err(io_err(&marker)(e)),
        };
        let m: Marker = serde_json::from_str(&text).map_err(|_| StoreError::NotWorkspace(root.clone()))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(StoreError::SchemaVersion(m.schema_version));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn pipelines_dir(&self) -> PathBuf {
        self.root.join("pipelines")
    }

    pub fn templates_dir(&self) -> PathBuf {
        self.root.join("templates")
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn pipeline_dir(&self, id: &PipelineId) -> PathBuf {
        self.pipelines_dir().join(id.to_string())
    }

    pub fn state_path(&self, id: &PipelineId) -> PathBuf {
        self.pipeline_dir(id).join("state")
    }

    pub fn artifacts_dir(&self, id: &PipelineId) -> PathBuf {
        self.pipeline_dir(id).join("artifacts")
    }

    pub fn trail(&self, id: &PipelineId) -> TrailFile {
        TrailFile::new(self.pipeline_dir(id).join("trail.log"))
    }

    pub fn exists(&self, id: &PipelineId) -> bool {
        self.trail(id).path().exists()
    }

    /// Pipeline ids with a trail on disk, sorted.
    pub fn list_pipelines(&self) -> Result<Vec<PipelineId>, StoreError> {
        let dir = self.pipelines_dir();
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            if let Some(id) = entry.file_name().to_str().and_then(|n| n.parse::<PipelineId>().ok()) {
                if self.exists(&id) {
                    ids.push(id);
                }
            }
        }
        ids.sort_by_key(ToString::to_string);
        Ok(ids)
    }

    /// Take the writer lock for one pipeline without blocking.
    pub fn lock(&self, id: &PipelineId) -> Result<PipelineLock, StoreError> {
        let path = self.pipeline_dir(id).join(LOCK_FILE);
        match create_lock_file(&path) {
            Ok(()) => Ok(PipelineLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(StoreError::Busy(id.clone())),
            Err(e) if e.kind() == ErrorKind::NotFound => Err(StoreError::UnknownPipeline(id.clone())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn lock_server(&self) -> Result<ServerLock, StoreError> {
        let path = self.root.join(SERVER_LOCK_FILE);
        match create_lock_file(&path) {
            Ok(()) => Ok(ServerLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(StoreError::ServerLocked(path)),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Load a pipeline with its trail. The trail must verify; the state
    /// file must agree with the replayed trail when it is current.
    pub fn load_with_trail(&self, id: &PipelineId) -> Result<(Pipeline, Vec<TrailEvent>), StoreError> {
        if !self.exists(id) {
            return Err(StoreError::UnknownPipeline(id.clone()));
        }
        let trail = self.trail(id).read()?;
        if let Some(foreign) = trail.iter().find(|e| e.pipeline_id != *id) {
            return Err(StoreError::Corrupt {
                id: id.clone(),
                detail: format!("trail event {} belongs to {}", foreign.seq, foreign.pipeline_id),
            });
        }
        let events = decode_events(&trail)?;
        let replayed = Pipeline::replay(&events).map_err(|e| StoreError::Corrupt {
            id: id.clone(),
            detail: format!("trail does not replay: {e}"),
        })?;
        let state_path = self.state_path(id);
        match fs::read_to_string(&state_path) {
            Ok(text) => {
                let stored: Pipeline = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
                    id: id.clone(),
                    detail: format!("state file does not parse: {e}"),
                })?;
                if stored.revision > replayed.revision
                    || (stored.revision == replayed.revision && stored != replayed)
                {
                    return Err(StoreError::Corrupt {
                        id: id.clone(),
                        detail: format!(
                            "state file (revision {}) disagrees with trail (revision {})",
                            stored.revision, replayed.revision
                        ),
                    });
                }
            }
            Err(e) if e.kind() == ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(&state_path)(e)),
        }
        Ok((replayed, trail))
    }

    pub fn load(&self, id: &PipelineId) -> Result<Pipeline, StoreError> {
        Ok(self.load_with_trail(id)?.0)
    }

    fn write_state(&self, pipeline: &Pipeline) -> Result<(), StoreError> {
        let text = to_canonical_pretty(pipeline).expect("pipeline serializes");
        write_atomic(&self.state_path(&pipeline.id), text.as_bytes())
    }

    fn persist(&self, pipeline: &Pipeline, last: Option<&TrailEvent>, transition_events: &[crate::PipelineEvent]) -> Result<Vec<TrailEvent>, StoreError> {
        let sealed = self.trail(&pipeline.id).append(last, &pipeline.id, transition_events)?;
        self.write_state(pipeline)?;
        Ok(sealed)
    }

    pub fn create_pipeline(&self, project: &str, domain: &str, scale: Scale) -> Result<Committed<PipelineId>, StoreError> {
        let t = Pipeline::create(project, domain, scale)?;
        let id = t.value.id.clone();
        let dir = self.pipeline_dir(&id);
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::AlreadyExists => return Err(StoreError::PipelineExists(id)),
            Err(e) => return Err(io_err(&dir)(e)),
        }
        let _lock = self.lock(&id)?;
        let artifacts = self.artifacts_dir(&id);
        fs::create_dir_all(&artifacts).map_err(io_err(&artifacts))?;
        let events = self.persist(&t.value, None, &t.events)?;
        Ok(Committed {
            value: id,
            notices: t.notices,
            events,
            pipeline: t.value,
        })
    }

    /// Run one engine operation under the pipeline's writer lock. Nothing is
    /// written unless the operation succeeds, and the trail is written
    /// before the state.
    pub fn mutate<T, F>(&self, id: &PipelineId, op: F) -> Result<Committed<T>, StoreError>
    where
        F: FnOnce(&mut Pipeline) -> Result<Transition<T>, EngineError>,
    {
        if !self.exists(id) {
            return Err(StoreError::UnknownPipeline(id.clone()));
        }
        let _lock = self.lock(id)?;
        let (mut pipeline, trail) = self.load_with_trail(id)?;
        let t = op(&mut pipeline)?;
        let events = self.persist(&pipeline, trail.last(), &t.events)?;
        Ok(Committed {
            value: t.value,
            notices: t.notices,
            events,
            pipeline,
        })
    }

    // -- templates ---------------------------------------------------------

    fn check_name(name: &str) -> Result<(), StoreError> {
        let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if ok {
            Ok(())
        } else {
            Err(StoreError::BadName(name.to_string()))
        }
    }

    /// Write one type's templates to `templates/<type>/<stage>.md`.
    pub fn write_templates(&self, type_name: &str, templates: &BTreeMap<Stage, StageTemplate>) -> Result<Vec<PathBuf>, StoreError> {
        Self::check_name(type_name)?;
        let dir = self.templates_dir().join(type_name);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut written = Vec::new();
        for (stage, t) in templates {
            let path = dir.join(format!("{}.md", stage.slug()));
            write_atomic(&path, render_template(t).as_bytes())?;
            written.push(path);
        }
        Ok(written)
    }

    /// A pipeline type from the workspace, falling back to the built-ins.
    pub fn pipeline_type(&self, name: &str) -> Result<PipelineType, StoreError> {
        Self::check_name(name)?;
        let dir = self.templates_dir().join(name);
        if !dir.is_dir() {
            return Ok(template::builtin_type(name)?.clone());
        }
        let mut docs = BTreeMap::new();
        for stage in Stage::ALL {
            let path = dir.join(format!("{}.md", stage.slug()));
            match fs::read_to_string(&path) {
                Ok(text) => {
                    docs.insert(stage, text);
                }
                Err(e) if e.kind() == ErrorKind::NotFound => {}
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
        Ok(PipelineType::from_documents(name, &docs, "workspace template set")?)
    }

    /// Names of built-in types plus any workspace-defined ones, sorted.
    pub fn list_types(&self) -> Result<Vec<String>, StoreError> {
        let mut names: Vec<String> = template::BUILTIN_TYPE_NAMES.iter().map(|s| s.to_string()).collect();
        let dir = self.templates_dir();
        if dir.is_dir() {
            for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
                let entry = entry.map_err(io_err(&dir))?;
                if entry.path().is_dir() {
                    if let Some(n) = entry.file_name().to_str() {
                        names.push(n.to_string());
                    }
                }
            }
        }
        names.sort();
        names.dedup();
        Ok(names)
    }

    // -- datasets ----------------------------------------------------------

    pub fn dataset_path(&self, name: &str) -> PathBuf {
        self.datasets_dir().join(format!("{name}.json"))
    }

    /// Store records in canonical form under `datasets/<name>.json`.
    pub fn save_dataset(&self, name: &str, records: &[InteractionRecord]) -> Result<PathBuf, StoreError> {
        Self::check_name(name)?;
        let path = self.dataset_path(name);
        write_atomic(&path, dataset::render_dataset(records).as_bytes())?;
        Ok(path)
    }

    pub fn load_dataset(&self, name: &str) -> Result<Vec<InteractionRecord>, StoreError> {
        Self::check_name(name)?;
        let path = self.dataset_path(name);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(StoreError::UnknownDataset(name.to_string())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        dataset::parse_dataset(&text)
            .map(|d| d.records)
            .map_err(StoreError::Dataset)
    }

    pub fn list_datasets(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.datasets_dir();
        let mut names = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    names.push(stem.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }
}

/// Write via a temporary sibling and rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(io_err(path))
}

/// Read a dataset from a combined file or a directory of `.json` files.
/// Directory entries are read in file-name order.
pub fn read_dataset_source(path: &Path) -> Result<dataset::Dataset, StoreError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        let mut values = Vec::new();
        let mut errors = Vec::new();
        for f in files {
            let text = fs::read_to_string(&f).map_err(io_err(&f))?;
            match serde_json::from_str::<serde_json::Value>(&text) {
                Ok(serde_json::Value::Array(items)) => values.extend(items),
                Ok(v) => values.push(v),
                Err(e) => errors.push(DatasetError::Syntax {
                    detail: format!("{}: {e}", f.display()),
                }),
            }
        }
        if !errors.is_empty() {
            return Err(StoreError::Dataset(errors));
        }
        dataset::parse_values(values).map_err(StoreError::Dataset)
    } else {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        dataset::parse_dataset(&text).map_err(StoreError::Dataset)
    }
}
