//! Versioned prompt assets and `{{placeholder}}` rendering.
//!
//! The built-in set is compiled in; a directory of `<name>.txt` files can
//! replace any subset of it at runtime.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::taxonomy::Stage;

/// Line prefix carrying the previously completed stage in the stage prompt.
pub const MARKER_PREVIOUS_STAGE: &str = "Previously completed stage:";
/// Line prefix naming the planned stage in reflection and response prompts.
pub const MARKER_CURRENT_STAGE: &str = "Current therapeutic stage:";
/// Line prefix naming the rated dimension in the supervisor prompt.
pub const MARKER_DIMENSION: &str = "Dimension:";
pub const MARKER_CLIENT_UTTERANCE: &str = "[Client utterance]:";
pub const MARKER_OUTPUT: &str = "[Output]:";

pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no prompt template named {0:?}")]
    MissingTemplate(String),
    #[error("template {template:?} has no value for placeholder {{{{{name}}}}}")]
    UnfilledPlaceholder { template: String, name: String },
    #[error("template {template:?} has an unterminated placeholder")]
    Unterminated { template: String },
    #[error("reading prompt directory {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../prompts/v1/", $name, ".txt")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin![
    "stage",
    "reflection_trust_building",
    "reflection_problem_externalization",
    "reflection_re_authoring",
    "reflection_re_membering",
    "response_trust_building",
    "response_problem_externalization",
    "response_re_authoring",
    "response_re_membering",
    "role_play",
    "client_system",
    "client_user",
    "im_system",
    "im_user",
    "im_examples",
    "supervisor_system",
    "supervisor_user",
];

pub fn reflection_template(stage: Stage) -> String {
    format!("reflection_{}", stage.slug())
}

pub fn response_template(stage: Stage) -> String {
    format!("response_{}", stage.slug())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    templates: BTreeMap<String, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Built-in set with every `*.txt` file in `dir` layered on top.
    pub fn with_overrides(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let io_err = |source| PromptError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut set = Self::builtin();
        for entry in std::fs::read_dir(dir).map_err(io_err)? {
            let path = entry.map_err(io_err)?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                    continue;
                };
                let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.clone(),
                    source,
                })?;
                set.templates.insert(stem.to_string(), text);
            }
        }
        Ok(set)
    }

    pub fn insert(&mut self, name: impl Into<String>, template: impl Into<String>) {
        self.templates.insert(name.into(), template.into());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&str, PromptError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| PromptError::MissingTemplate(name.to_string()))
    }

    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        render_template(name, self.get(name)?, vars)
    }
}

/// Substitutes `{{name}}` placeholders in one pass; substituted values are
/// never re-scanned. Every placeholder must have a value.
pub fn render_template(
    name: &str,
    template: &str,
    vars: &[(&str, &str)],
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or_else(|| PromptError::Unterminated {
            template: name.to_string(),
        })?;
        let key = after[..close].trim();
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::UnfilledPlaceholder {
                template: name.to_string(),
                name: key.to_string(),
            })?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_without_rescanning_values() {
        let out = render_template("t", "a {{x}} b {{ y }}", &[("x", "{{y}}"), ("y", "2")]).unwrap();
        assert_eq!(out, "a {{y}} b 2");
    }

    #[test]
    fn missing_value_is_an_error() {
        assert!(matches!(
            render_template("t", "{{x}}", &[]),
            Err(PromptError::UnfilledPlaceholder { .. })
        ));
        assert!(matches!(
            render_template("t", "{{x", &[("x", "1")]),
            Err(PromptError::Unterminated { .. })
        ));
    }

    #[test]
    fn builtin_assets_exist_per_stage() {
        let set = PromptSet::builtin();
        for stage in Stage::ALL {
            assert!(set
                .get(&reflection_template(stage))
                .unwrap()
                .contains(MARKER_CURRENT_STAGE));
            assert!(set
                .get(&response_template(stage))
                .unwrap()
                .contains(stage.label()));
        }
        assert!(set.get("stage").unwrap().contains(MARKER_PREVIOUS_STAGE));
        assert!(set.get("nope").is_err());
    }

    #[test]
    fn directory_overrides_single_asset() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("role_play.txt"), "custom {{memory}}").unwrap();
        std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let set = PromptSet::with_overrides(dir.path()).unwrap();
        assert_eq!(set.get("role_play").unwrap(), "custom {{memory}}");
        assert_eq!(
            set.get("stage").unwrap(),
            PromptSet::builtin().get("stage").unwrap()
        );
        assert!(set.get("notes").is_err());
    }
}
