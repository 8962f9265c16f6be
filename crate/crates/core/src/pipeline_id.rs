use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineIdError {
    #[error("{which} segment '{value}' must match [A-Z0-9]+")]
    BadSegment { which: &'static str, value: String },
    #[error("pipeline id '{0}' must have the form P-PROJECT-DOMAIN")]
    BadFormat(String),
}

/// Pipeline identifier rendered as `P-<PROJECT>-<DOMAIN>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PipelineId {
    project: String,
    domain: String,
}

fn valid_segment(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
}

impl PipelineId {
    pub fn new(project: &str, domain: &str) -> Result<Self, PipelineIdError> {
        if !valid_segment(project) {
            return Err(PipelineIdError::BadSegment {
                which: "project",
                value: project.to_string(),
            });
        }
        if !valid_segment(domain) {
            return Err(PipelineIdError::BadSegment {
                which: "domain",
                value: domain.to_string(),
            });
        }
        Ok(Self {
            project: project.to_string(),
            domain: domain.to_string(),
        })
    }

    pub fn project(&self) -> &str {
        &self.project
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }
}

impl fmt::Display for PipelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P-{}-{}", self.project, self.domain)
    }
}

impl FromStr for PipelineId {
    type Err = PipelineIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s
            .strip_prefix("P-")
            .ok_or_else(|| PipelineIdError::BadFormat(s.to_string()))?;
        let (project, domain) = rest
            .split_once('-')
            .ok_or_else(|| PipelineIdError::BadFormat(s.to_string()))?;
        if domain.contains('-') {
            return Err(PipelineIdError::BadFormat(s.to_string()));
        }
        Self::new(project, domain)
    }
}

impl Serialize for PipelineId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PipelineId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
