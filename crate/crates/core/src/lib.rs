//! Core of the `ctxpipe` orchestrator: role-typed context packages, the
//! stage-gated pipeline engine, stage templates, extraction-dataset
//! aggregation, the closed-form estimators and the hash-chained audit trail.

pub mod canonical;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod pipeline;
pub mod pipeline_id;
pub mod roles;
pub mod stage;
pub mod template;
pub mod trail;
pub mod workspace;

pub use pipeline::{
    AuditFinding, CrossToolPattern, EngineError, FindingCategory, FindingSeverity, IterationRoute, Notice,
    Pipeline, PipelineEvent, PipelineStatus, RecordStatus, Scale, StageRecord, ToolDescriptor, ToolType,
};
pub use pipeline_id::PipelineId;
pub use roles::{ContextElement, ContextPackage, ContextRole, ElementTag, Severity, SizeClass, SourceKind};
pub use stage::Stage;
