//! Therapeutic stages, their reflection levels, and label normalization.
//!
//! A [`TherapeuticState`] is the `(stage, level)` pair the planner emits each
//! turn. States can only be built through [`validate_state`] or
//! [`TherapeuticState::new`], so a level never belongs to a different stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("`{label}` is not a reflection level of stage {stage}")]
    UnknownLevel { stage: Stage, label: String },
    #[error("`{0}` is not a therapeutic stage")]
    UnknownStage(String),
    #[error("stage {stage} has no level {index}")]
    LevelOutOfRange { stage: Stage, index: u8 },
}

/// The four macro phases of a session, in therapeutic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    TrustBuilding,
    ProblemExternalization,
    ReAuthoring,
    ReMembering,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::TrustBuilding,
        Stage::ProblemExternalization,
        Stage::ReAuthoring,
        Stage::ReMembering,
    ];

    /// 1-based position in the therapeutic sequence.
    pub fn ordinal(self) -> u8 {
        match self {
            Stage::TrustBuilding => 1,
            Stage::ProblemExternalization => 2,
            Stage::ReAuthoring => 3,
            Stage::ReMembering => 4,
        }
    }

    pub fn from_ordinal(ordinal: u8) -> Option<Stage> {
        Stage::ALL
            .get(usize::from(ordinal).checked_sub(1)?)
            .copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage::TrustBuilding => "Trust Building",
            Stage::ProblemExternalization => "Problem Externalization",
            Stage::ReAuthoring => "Re-authoring Conversation",
            Stage::ReMembering => "Re-membering Conversation",
        }
    }

    /// File-name friendly identifier, used for prompt asset names.
    pub fn slug(self) -> &'static str {
        match self {
            Stage::TrustBuilding => "trust_building",
            Stage::ProblemExternalization => "problem_externalization",
            Stage::ReAuthoring => "re_authoring",
            Stage::ReMembering => "re_membering",
        }
    }

    pub fn levels(self) -> &'static [ReflectionLevel] {
        levels_for_stage(self)
    }

    /// Parses free-form stage text as produced by a model.
    ///
    /// Accepts the canonical labels with or without the "conversation" and
    /// "stage" suffixes, in any casing, with hyphens and spaces ignored.
    pub fn parse_label(raw: &str) -> Result<Stage, TaxonomyError> {
        let mut key = normalize_label(raw);
        for suffix in ["stage", "conversation"] {
            if key.len() > suffix.len() && key.ends_with(suffix) {
                key.truncate(key.len() - suffix.len());
            }
        }
        if let Some(rest) = key.strip_prefix("stage") {
            if let Ok(n) = rest.parse::<u8>() {
                return Stage::from_ordinal(n)
                    .ok_or_else(|| TaxonomyError::UnknownStage(raw.into()));
            }
        }
        match key.as_str() {
            "trustbuilding" | "trust" => Ok(Stage::TrustBuilding),
            "problemexternalization"
            | "externalization"
            | "externalisation"
            | "problemexternalisation" => Ok(Stage::ProblemExternalization),
            "reauthoring" => Ok(Stage::ReAuthoring),
            "remembering" => Ok(Stage::ReMembering),
            _ => Err(TaxonomyError::UnknownStage(raw.into())),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stage {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::parse_label(s)
    }
}

impl Serialize for Stage {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Stage {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Stage::parse_label(&raw).map_err(serde::de::Error::custom)
    }
}

/// One reflection level within a stage; `index` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReflectionLevel {
    pub stage: Stage,
    pub index: u8,
    pub name: &'static str,
}

impl ReflectionLevel {
    pub fn get(stage: Stage, index: u8) -> Result<ReflectionLevel, TaxonomyError> {
        usize::from(index)
            .checked_sub(1)
            .and_then(|i| levels_for_stage(stage).get(i))
            .copied()
            .ok_or(TaxonomyError::LevelOutOfRange { stage, index })
    }

    pub fn first(stage: Stage) -> ReflectionLevel {
        levels_for_stage(stage)[0]
    }
}

impl fmt::Display for ReflectionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

macro_rules! level {
    ($stage:ident, $index:literal, $name:literal) => {
        ReflectionLevel {
            stage: Stage::$stage,
            index: $index,
            name: $name,
        }
    };
}

const TRUST_BUILDING: [ReflectionLevel; 2] = [
    level!(TrustBuilding, 1, "Exploration of Problem Event"),
    level!(TrustBuilding, 2, "Empathic Support and Comfort"),
];

const PROBLEM_EXTERNALIZATION: [ReflectionLevel; 4] = [
    level!(
        ProblemExternalization,
        1,
        "Negotiation of the Dominant Problem"
    ),
    level!(
        ProblemExternalization,
        2,
        "Mapping of the Problem's Effects"
    ),
    level!(
        ProblemExternalization,
        3,
        "Evaluation of the Problem's Effects"
    ),
    level!(
        ProblemExternalization,
        4,
        "Justification of the Evaluations"
    ),
];

const RE_AUTHORING: [ReflectionLevel; 3] = [
    level!(ReAuthoring, 1, "Elaboration of Unique Outcomes"),
    level!(ReAuthoring, 2, "Exploration of Identity Landscape"),
    level!(ReAuthoring, 3, "Exploration of Action Landscape"),
];

const RE_MEMBERING: [ReflectionLevel; 4] = [
    level!(ReMembering, 1, "Significant Others' Contributions"),
    level!(ReMembering, 2, "Seeing Self through Significant Others"),
    level!(ReMembering, 3, "One's Contribution to Others' Lives"),
    level!(ReMembering, 4, "One's Implications for Others' Identity"),
];

/// Canonical ordered reflection levels of a stage.
pub fn levels_for_stage(stage: Stage) -> &'static [ReflectionLevel] {
    match stage {
        Stage::TrustBuilding => &TRUST_BUILDING,
        Stage::ProblemExternalization => &PROBLEM_EXTERNALIZATION,
        Stage::ReAuthoring => &RE_AUTHORING,
        Stage::ReMembering => &RE_MEMBERING,
    }
}

/// Comparison key for labels: lowercase alphanumerics only.
///
/// Casing, whitespace runs, hyphens and apostrophe variants all collapse, so
/// "Re-authoring", "reauthoring" and "RE AUTHORING" share a key.
pub fn normalize_label(raw: &str) -> String {
    raw.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Resolves a level label against the canonical table of `stage`.
pub fn validate_state(stage: Stage, level_name: &str) -> Result<TherapeuticState, TaxonomyError> {
    let key = normalize_label(level_name);
    levels_for_stage(stage)
        .iter()
        .find(|level| normalize_label(level.name) == key)
        .map(|&level| TherapeuticState { stage, level })
        .ok_or_else(|| TaxonomyError::UnknownLevel {
            stage,
            label: level_name.to_string(),
        })
}

/// A planned `(stage, level)` pair. The level always belongs to the stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TherapeuticState {
    stage: Stage,
    level: ReflectionLevel,
}

impl TherapeuticState {
    pub fn new(stage: Stage, level_index: u8) -> Result<Self, TaxonomyError> {
        Ok(Self {
            stage,
            level: ReflectionLevel::get(stage, level_index)?,
        })
    }

    pub fn from_level(level: ReflectionLevel) -> Self {
        Self {
            stage: level.stage,
            level,
        }
    }

    /// Level 1 of the given stage.
    pub fn initial(stage: Stage) -> Self {
        Self::from_level(ReflectionLevel::first(stage))
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn level(&self) -> ReflectionLevel {
        self.level
    }

    /// Short badge such as "Trust Building / L1".
    pub fn badge(&self) -> String {
        format!("{} / L{}", self.stage.label(), self.level.index)
    }
}

impl fmt::Display for TherapeuticState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}", self.stage.label(), self.level.name)
    }
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    stage: Stage,
    level: String,
}

impl Serialize for TherapeuticState {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        StateRepr {
            stage: self.stage,
            level: self.level.name.to_string(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TherapeuticState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = StateRepr::deserialize(deserializer)?;
        validate_state(repr.stage, &repr.level).map_err(serde::de::Error::custom)
    }
}

/// Every valid state, in stage then level order.
pub fn all_states() -> impl Iterator<Item = TherapeuticState> {
    Stage::ALL.into_iter().flat_map(|stage| {
        levels_for_stage(stage)
            .iter()
            .copied()
            .map(TherapeuticState::from_level)
    })
}
