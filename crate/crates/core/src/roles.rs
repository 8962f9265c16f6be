//! Context roles, elements and packages.
//!
//! Every element of a context package carries one of five roles with a fixed
//! priority (Authority = 1 through Metadata = 5). When the operator declares
//! that two elements conflict, the element whose role has the lower priority
//! number wins; two elements of equal priority escalate to the operator.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::error::ParseEnumError;
use crate::pipeline_id::PipelineId;
use crate::stage::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextRole {
    Authority,
    Exemplar,
    Constraint,
    Rubric,
    Metadata,
}

impl ContextRole {
    pub const ALL: [ContextRole; 5] = [
        ContextRole::Authority,
        ContextRole::Exemplar,
        ContextRole::Constraint,
        ContextRole::Rubric,
        ContextRole::Metadata,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ContextRole::Authority => "Authority",
            ContextRole::Exemplar => "Exemplar",
            ContextRole::Constraint => "Constraint",
            ContextRole::Rubric => "Rubric",
            ContextRole::Metadata => "Metadata",
        }
    }
}

/// Fixed priority ranking; lower numbers win conflicts.
pub fn priority_of(role: ContextRole) -> u8 {
    match role {
        ContextRole::Authority => 1,
        ContextRole::Exemplar => 2,
        ContextRole::Constraint => 3,
        ContextRole::Rubric => 4,
        ContextRole::Metadata => 5,
    }
}

impl fmt::Display for ContextRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextRole {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ContextRole::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ParseEnumError::new("role", s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    File,
    Verbal,
    Memory,
}

impl SourceKind {
    pub fn name(self) -> &'static str {
        match self {
            SourceKind::File => "file",
            SourceKind::Verbal => "verbal",
            SourceKind::Memory => "memory",
        }
    }
}

impl FromStr for SourceKind {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "file" => Ok(SourceKind::File),
            "verbal" => Ok(SourceKind::Verbal),
            "memory" => Ok(SourceKind::Memory),
            _ => Err(ParseEnumError::new("source kind", s)),
        }
    }
}

/// Special standing an Authority element may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementTag {
    DesignAuthority,
    OperatorAuthority,
    MasterReference,
}

impl FromStr for ElementTag {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "designauthority" => Ok(ElementTag::DesignAuthority),
            "operatorauthority" => Ok(ElementTag::OperatorAuthority),
            "masterreference" => Ok(ElementTag::MasterReference),
            _ => Err(ParseEnumError::new("element tag", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextElement {
    pub element_id: String,
    pub role: ContextRole,
    pub source_kind: SourceKind,
    pub label: String,
    pub content_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_estimate: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<ElementTag>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewed: Option<bool>,
}

impl ContextElement {
    pub fn new(
        element_id: impl Into<String>,
        role: ContextRole,
        source_kind: SourceKind,
        label: impl Into<String>,
        content_ref: impl Into<String>,
    ) -> Self {
        Self {
            element_id: element_id.into(),
            role,
            source_kind,
            label: label.into(),
            content_ref: content_ref.into(),
            token_estimate: None,
            tags: None,
            reviewed: None,
        }
    }

    pub fn with_tokens(mut self, tokens: u64) -> Self {
        self.token_estimate = Some(tokens);
        self
    }

    pub fn with_tag(mut self, tag: ElementTag) -> Self {
        let tags = self.tags.get_or_insert_with(Vec::new);
        if !tags.contains(&tag) {
            tags.push(tag);
        }
        self
    }

    pub fn reviewed(mut self, reviewed: bool) -> Self {
        self.reviewed = Some(reviewed);
        self
    }

    pub fn tokens(&self) -> u64 {
        self.token_estimate.unwrap_or(0)
    }

    pub fn has_tag(&self, tag: ElementTag) -> bool {
        self.tags.as_deref().is_some_and(|t| t.contains(&tag))
    }

    pub fn is_reviewed(&self) -> bool {
        self.reviewed.unwrap_or(false)
    }

    pub fn priority(&self) -> u8 {
        priority_of(self.role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextPackage {
    pub package_id: String,
    pub pipeline_id: PipelineId,
    pub stage: Stage,
    pub elements: Vec<ContextElement>,
}

impl ContextPackage {
    pub fn new(package_id: impl Into<String>, pipeline_id: PipelineId, stage: Stage) -> Self {
        Self {
            package_id: package_id.into(),
            pipeline_id,
            stage,
            elements: Vec::new(),
        }
    }

    pub fn with_element(mut self, element: ContextElement) -> Self {
        self.elements.push(element);
        self
    }

    pub fn total_tokens(&self) -> u64 {
        self.elements.iter().map(ContextElement::tokens).sum()
    }

    pub fn element(&self, element_id: &str) -> Option<&ContextElement> {
        self.elements.iter().find(|e| e.element_id == element_id)
    }

    pub fn has_design_authority(&self) -> bool {
        self.elements
            .iter()
            .any(|e| e.role == ContextRole::Authority && e.has_tag(ElementTag::DesignAuthority))
    }

    /// Elements ordered by priority; ties keep manifest order.
    pub fn by_priority(&self) -> Vec<&ContextElement> {
        let mut v: Vec<_> = self.elements.iter().collect();
        v.sort_by_key(|e| e.priority());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PackageError {
    #[error("INVALID_INPUT: element '{0}' cannot conflict with itself")]
    IdenticalElements(String),
    #[error("MANIFEST_SYNTAX: {0}")]
    Syntax(String),
    #[error("DUPLICATE_ELEMENT_ID: '{0}' appears more than once")]
    DuplicateElement(String),
    #[error("MISPLACED_TAG: element '{0}' carries an authority tag but its role is not Authority")]
    MisplacedTag(String),
    #[error("UNKNOWN_ELEMENT: no element '{0}' in package")]
    UnknownElement(String),
}

impl PackageError {
    pub fn code(&self) -> &'static str {
        match self {
            PackageError::IdenticalElements(_) => "INVALID_INPUT",
            PackageError::Syntax(_) => "MANIFEST_SYNTAX",
            PackageError::DuplicateElement(_) => "DUPLICATE_ELEMENT_ID",
            PackageError::MisplacedTag(_) => "MISPLACED_TAG",
            PackageError::UnknownElement(_) => "UNKNOWN_ELEMENT",
        }
    }
}

// ---------------------------------------------------------------------------
// Conflict resolution

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConflictOutcome {
    Resolved,
    OperatorEscalation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictResolution {
    pub winner: Option<String>,
    pub loser: Option<String>,
    pub outcome: ConflictOutcome,
    pub rationale: String,
}

/// Resolve an operator-declared conflict between two elements by role priority.
pub fn resolve_conflict(
    a: &ContextElement,
    b: &ContextElement,
) -> Result<ConflictResolution, PackageError> {
    if a.element_id == b.element_id {
        return Err(PackageError::IdenticalElements(a.element_id.clone()));
    }
    let (pa, pb) = (a.priority(), b.priority());
    if pa == pb {
        return Ok(ConflictResolution {
            winner: None,
            loser: None,
            outcome: ConflictOutcome::OperatorEscalation,
            rationale: format!(
                "{} (Priority {pa}) and {} (Priority {pb}) share a priority; operator decision required",
                a.role, b.role
            ),
        });
    }
    let (win, lose) = if pa < pb { (a, b) } else { (b, a) };
    Ok(ConflictResolution {
        winner: Some(win.element_id.clone()),
        loser: Some(lose.element_id.clone()),
        outcome: ConflictOutcome::Resolved,
        rationale: format!(
            "{} wins (Priority {} overrides Priority {})",
            win.role,
            win.priority(),
            lose.priority()
        ),
    })
}

// ---------------------------------------------------------------------------
// Validation lints

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
    Info,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
            Severity::Info => "info",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageFinding {
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

impl PackageFinding {
    pub(crate) fn new(severity: Severity, code: &str, message: String) -> Self {
        Self {
            severity,
            code: code.to_string(),
            message,
        }
    }
}

/// Lint a package. Never fails; findings are sorted by severity, then code,
/// keeping element order within a code.
pub fn validate_package(pkg: &ContextPackage) -> Vec<PackageFinding> {
    let mut out = Vec::new();
    if pkg.elements.is_empty() {
        out.push(PackageFinding::new(
            Severity::Error,
            "NO_ELEMENTS",
            format!("package '{}' has no elements", pkg.package_id),
        ));
        return out;
    }

    let mut seen = BTreeSet::new();
    for e in &pkg.elements {
        if !seen.insert(e.element_id.as_str()) {
            out.push(PackageFinding::new(
                Severity::Error,
                "DUPLICATE_ELEMENT_ID",
                format!("element id '{}' appears more than once", e.element_id),
            ));
        }
        if e.role != ContextRole::Authority && e.tags.as_deref().is_some_and(|t| !t.is_empty()) {
            out.push(PackageFinding::new(
                Severity::Error,
                "MISPLACED_TAG",
                format!(
                    "element '{}' has role {} but carries authority tags",
                    e.element_id, e.role
                ),
            ));
        }
    }

    let authorities: Vec<_> = pkg
        .elements
        .iter()
        .filter(|e| e.role == ContextRole::Authority)
        .collect();
    if !authorities.iter().any(|e| e.source_kind == SourceKind::File) {
        out.push(PackageFinding::new(
            Severity::Warning,
            "NO_FILE_AUTHORITY",
            "no file-based Authority element; the builder has no governing document".to_string(),
        ));
        if !authorities.is_empty() && authorities.iter().all(|e| e.source_kind == SourceKind::Verbal) {
            out.push(PackageFinding::new(
                Severity::Warning,
                "VERBAL_AUTHORITY",
                "authority is stated only verbally; externalize it as a file".to_string(),
            ));
        }
    }

    for e in pkg.elements.iter().filter(|e| e.source_kind == SourceKind::File) {
        if !e.is_reviewed() {
            out.push(PackageFinding::new(
                Severity::Info,
                "UNTRUSTED_SOURCE",
                format!(
                    "file element '{}' ({}) has not been reviewed; treat its content as untrusted input",
                    e.element_id, e.content_ref
                ),
            ));
        }
    }

    out.sort_by(|a, b| a.severity.cmp(&b.severity).then_with(|| a.code.cmp(&b.code)));
    out
}

// ---------------------------------------------------------------------------
// Size classification and token estimates

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeClass {
    Minimal,
    Moderate,
    Comprehensive,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Minimal, SizeClass::Moderate, SizeClass::Comprehensive];

    /// `< 500` Minimal, `500..=2000` Moderate, `> 2000` Comprehensive.
    pub fn from_tokens(total: u64) -> Self {
        match total {
            0..=499 => SizeClass::Minimal,
            500..=2000 => SizeClass::Moderate,
            _ => SizeClass::Comprehensive,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Minimal => "Minimal",
            SizeClass::Moderate => "Moderate",
            SizeClass::Comprehensive => "Comprehensive",
        }
    }
}

pub fn classify_size(pkg: &ContextPackage) -> SizeClass {
    SizeClass::from_tokens(pkg.total_tokens())
}

/// Tokenizer-independent estimate: one token per four bytes, rounded up.
pub fn estimate_tokens(content: &[u8]) -> u64 {
    (content.len() as u64).div_ceil(4)
}

// ---------------------------------------------------------------------------
// Manifest files

/// Parse a package manifest, enforcing element-id uniqueness and tag placement.
pub fn parse_manifest(text: &str) -> Result<ContextPackage, PackageError> {
    let pkg: ContextPackage =
        serde_json::from_str(text).map_err(|e| PackageError::Syntax(e.to_string()))?;
    check_package(&pkg)?;
    Ok(pkg)
}

/// Structural invariants a package must satisfy before it can be attached.
pub fn check_package(pkg: &ContextPackage) -> Result<(), PackageError> {
    let mut seen = BTreeSet::new();
    for e in &pkg.elements {
        if !seen.insert(e.element_id.as_str()) {
            return Err(PackageError::DuplicateElement(e.element_id.clone()));
        }
        if e.role != ContextRole::Authority && e.tags.as_deref().is_some_and(|t| !t.is_empty()) {
            return Err(PackageError::MisplacedTag(e.element_id.clone()));
        }
    }
    Ok(())
}

/// Canonical manifest text: alphabetical keys, two-space indent, trailing newline.
pub fn render_manifest(pkg: &ContextPackage) -> String {
    canonical::to_canonical_pretty(pkg).expect("package serializes")
}
