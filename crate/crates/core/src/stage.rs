use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ParseEnumError;

/// One of the four pipeline stages, in canonical order.
/// Serialized by name ("Design"); parsed case-insensitively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Reviewer,
    Design,
    Builder,
    Auditor,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Reviewer, Stage::Design, Stage::Builder, Stage::Auditor];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Reviewer => "Reviewer",
            Stage::Design => "Design",
            Stage::Builder => "Builder",
            Stage::Auditor => "Auditor",
        }
    }

    /// Stages that must be settled before this one may begin.
    pub fn predecessors(self) -> &'static [Stage] {
        let idx = self as usize;
        &Self::ALL[..idx]
    }

    pub fn upstream(self) -> Option<Stage> {
        self.predecessors().last().copied()
    }

    pub fn downstream(self) -> Option<Stage> {
        Self::ALL.get(self as usize + 1).copied()
    }

    /// File-name stem used for template files (`reviewer.md`, ...).
    pub fn slug(self) -> &'static str {
        match self {
            Stage::Reviewer => "reviewer",
            Stage::Design => "design",
            Stage::Builder => "builder",
            Stage::Auditor => "auditor",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reviewer" | "review" => Ok(Stage::Reviewer),
            "design" | "designer" => Ok(Stage::Design),
            "builder" | "build" => Ok(Stage::Builder),
            "auditor" | "audit" => Ok(Stage::Auditor),
            _ => Err(ParseEnumError::new("stage", s)),
        }
    }
}

impl Serialize for Stage {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Stage {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order() {
        assert!(Stage::Reviewer < Stage::Design);
        assert!(Stage::Builder < Stage::Auditor);
        assert_eq!(Stage::Builder.predecessors(), &[Stage::Reviewer, Stage::Design]);
        assert_eq!(Stage::Reviewer.upstream(), None);
        assert_eq!(Stage::Auditor.downstream(), None);
    }

    #[test]
    fn parses_case_insensitively() {
        assert_eq!("AUDITOR".parse::<Stage>().unwrap(), Stage::Auditor);
        assert!("poet".parse::<Stage>().is_err());
    }
}
