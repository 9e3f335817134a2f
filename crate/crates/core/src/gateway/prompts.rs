use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {template} needs a value for {{{{{placeholder}}}}}")]
    MissingBinding { template: TemplateId, placeholder: String },
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
    #[error("unknown domain profile {0:?}")]
    UnknownProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateId {
    GraphExtraction,
    TrajectoryExtraction,
    GraphRevision,
    TrajectoryRevision,
    AliasMerge,
    EvalAlignment,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::GraphExtraction,
        TemplateId::TrajectoryExtraction,
        TemplateId::GraphRevision,
        TemplateId::TrajectoryRevision,
        TemplateId::AliasMerge,
        TemplateId::EvalAlignment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::GraphExtraction => "graph_extraction",
            TemplateId::TrajectoryExtraction => "trajectory_extraction",
            TemplateId::GraphRevision => "graph_revision",
            TemplateId::TrajectoryRevision => "trajectory_revision",
            TemplateId::AliasMerge => "alias_merge",
            TemplateId::EvalAlignment => "eval_alignment",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which wording of the prompts to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainProfile {
    #[default]
    Holocaust,
    LakeDistrict,
}

impl DomainProfile {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainProfile::Holocaust => "holocaust",
            DomainProfile::LakeDistrict => "lake_district",
        }
    }
}

impl FromStr for DomainProfile {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "holocaust" | "testimony" | "testimonies" => Ok(DomainProfile::Holocaust),
            "lake_district" | "lakedistrict" | "cldw" => Ok(DomainProfile::LakeDistrict),
            other => Err(PromptError::UnknownProfile(other.to_string())),
        }
    }
}

macro_rules! builtin {
    ($profile:literal) => {
        [
            include_str!(concat!("../../templates/", $profile, "/graph_extraction.txt")),
            include_str!(concat!("../../templates/", $profile, "/trajectory_extraction.txt")),
            include_str!(concat!("../../templates/", $profile, "/graph_revision.txt")),
            include_str!(concat!("../../templates/", $profile, "/trajectory_revision.txt")),
            include_str!(concat!("../../templates/", $profile, "/alias_merge.txt")),
            include_str!(concat!("../../templates/", $profile, "/eval_alignment.txt")),
        ]
    };
}

const HOLOCAUST: [&str; 6] = builtin!("holocaust");
const LAKE_DISTRICT: [&str; 6] = builtin!("lake_district");

/// Prompt templates: plain text with `{{placeholder}}` markers.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    profile: DomainProfile,
    templates: HashMap<TemplateId, String>,
}

impl PromptLibrary {
    pub fn builtin(profile: DomainProfile) -> Self {
        let texts = match profile {
            DomainProfile::Holocaust => HOLOCAUST,
            DomainProfile::LakeDistrict => LAKE_DISTRICT,
        };
        let templates = TemplateId::ALL
            .iter()
            .zip(texts)
            .map(|(id, text)| (*id, text.trim_end().to_string()))
            .collect();
        Self { profile, templates }
    }

    /// The built-in templates for `profile`, with any `<template_id>.txt`
    /// found in `dir` taking precedence.
    pub fn with_overrides(profile: DomainProfile, dir: &Path) -> Result<Self, PromptError> {
        let mut lib = Self::builtin(profile);
        for id in TemplateId::ALL {
            let path = dir.join(format!("{id}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                lib.templates.insert(id, text.trim_end().to_string());
            }
        }
        Ok(lib)
    }

    pub fn profile(&self) -> DomainProfile {
        self.profile
    }

    pub fn template(&self, id: TemplateId) -> &str {
        &self.templates[&id]
    }

    pub fn placeholders(&self, id: TemplateId) -> BTreeSet<String> {
        let text = self.template(id);
        let mut found = BTreeSet::new();
        let mut rest = text;
        while let Some(open) = rest.find("{{") {
            let after = &rest[open + 2..];
            match after.find("}}") {
                Some(close) => {
                    found.insert(after[..close].trim().to_string());
                    rest = &after[close + 2..];
                }
                None => break,
            }
        }
        found
    }

    pub fn render(&self, id: TemplateId, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = self.template(id).to_string();
        for placeholder in self.placeholders(id) {
            let value = bindings
                .iter()
                .find(|(k, _)| *k == placeholder)
                .map(|(_, v)| *v)
                .ok_or_else(|| PromptError::MissingBinding { template: id, placeholder: placeholder.clone() })?;
            out = out.replace(&format!("{{{{{placeholder}}}}}"), value);
        }
        Ok(out)
    }
}
