//! Innovative Moment assessment.
//!
//! Span-tag parsing, co-occurrence coding, model-backed classification,
//! salience, trajectories and inter-rater agreement.

mod classify;
mod coding;
mod kappa;
mod salience;
mod spans;
mod trajectory;
mod words;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use classify::{
    annotate_transcript, read_annotations, write_annotations, AnnotationFileError,
    AnnotationRecord, Annotator, ClassifyError,
};
pub use coding::apply_cooccurrence;
pub use kappa::{
    cohens_kappa, kappa_from_labels, meets_reliability_bar, per_type_kappa, KappaError,
    RELIABILITY_BAR,
};
pub use salience::{
    salience, salience_report, salience_report_with, salience_with, Mismatch, SalienceError,
    SalienceReport,
};
pub use spans::{parse_im_spans, render_im_spans, IMSpan, SpanError};
pub use trajectory::{trajectory, Trajectory, TrajectoryPoint};
pub use words::{word_count, word_ranges, Tokenizer, WhitespaceTokenizer};

/// The six Innovative Moment types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IMType {
    ActionI,
    ReflectionI,
    ProtestI,
    ActionII,
    ReflectionII,
    ProtestII,
}

pub type IMSet = BTreeSet<IMType>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown IM type {0:?}")]
pub struct UnknownIMType(pub String);

impl IMType {
    pub const ALL: [IMType; 6] = [
        IMType::ActionI,
        IMType::ReflectionI,
        IMType::ProtestI,
        IMType::ActionII,
        IMType::ReflectionII,
        IMType::ProtestII,
    ];

    /// Tag and display name, e.g. "Action I".
    pub fn label(self) -> &'static str {
        match self {
            IMType::ActionI => "Action I",
            IMType::ReflectionI => "Reflection I",
            IMType::ProtestI => "Protest I",
            IMType::ActionII => "Action II",
            IMType::ReflectionII => "Reflection II",
            IMType::ProtestII => "Protest II",
        }
    }

    pub fn level(self) -> u8 {
        match self {
            IMType::ActionI | IMType::ReflectionI | IMType::ProtestI => 1,
            IMType::ActionII | IMType::ReflectionII | IMType::ProtestII => 2,
        }
    }

    pub fn is_protest(self) -> bool {
        matches!(self, IMType::ProtestI | IMType::ProtestII)
    }

    /// Exact, case-sensitive tag name lookup.
    pub fn from_label(label: &str) -> Option<IMType> {
        IMType::ALL.into_iter().find(|t| t.label() == label)
    }
}

impl fmt::Display for IMType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for IMType {
    type Err = UnknownIMType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IMType::from_label(s.trim()).ok_or_else(|| UnknownIMType(s.to_string()))
    }
}

impl Serialize for IMType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for IMType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Who brought the innovative moment into the conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Resource {
    ClientGenerated,
    TherapistPromptedClientElaborated,
    TherapistInitiatedClientAccepted,
    None,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown resource {0:?}")]
pub struct UnknownResource(pub String);

impl Resource {
    pub fn label(self) -> &'static str {
        match self {
            Resource::ClientGenerated => "client-generated",
            Resource::TherapistPromptedClientElaborated => "therapist-prompted, client-elaborated",
            Resource::TherapistInitiatedClientAccepted => "therapist-initiated, client-accepted",
            Resource::None => "None",
        }
    }

    /// Lenient parse of model output: stray quotes, commas and casing are ignored.
    pub fn parse(raw: &str) -> Result<Resource, UnknownResource> {
        let key = crate::taxonomy::normalize_label(raw);
        match key.as_str() {
            "clientgenerated" => Ok(Resource::ClientGenerated),
            "therapistpromptedclientelaborated" => Ok(Resource::TherapistPromptedClientElaborated),
            "therapistinitiatedclientaccepted" => Ok(Resource::TherapistInitiatedClientAccepted),
            "none" => Ok(Resource::None),
            _ => Err(UnknownResource(raw.to_string())),
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for Resource {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Resource {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Resource::parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("turn {turn}: spans present but resource is None")]
    SpansWithoutResource { turn: u32 },
    #[error("turn {turn}: resource {resource} given without spans")]
    ResourceWithoutSpans { turn: u32, resource: Resource },
    #[error("turn {turn}: confidence {value} outside [0, 1]")]
    Confidence { turn: u32, value: f64 },
    #[error("turn {turn}: coded types do not follow the co-occurrence rules")]
    CodedTypes { turn: u32 },
}

/// IM coding of one client utterance.
///
/// Span offsets are byte offsets into the client utterance of `turn_index`.
/// Spans whose type was dropped by co-occurrence coding stay in `spans`.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnAnnotation {
    turn_index: u32,
    annotation_text: String,
    spans: Vec<IMSpan>,
    coded_types: IMSet,
    resource: Resource,
    confidence: f64,
    analysis: String,
}

impl TurnAnnotation {
    pub fn new(
        turn_index: u32,
        annotation_text: impl Into<String>,
        mut spans: Vec<IMSpan>,
        resource: Resource,
        confidence: f64,
        analysis: impl Into<String>,
    ) -> Result<Self, AnnotationError> {
        match (spans.is_empty(), resource) {
            (false, Resource::None) => {
                return Err(AnnotationError::SpansWithoutResource { turn: turn_index })
            }
            (true, r) if r != Resource::None => {
                return Err(AnnotationError::ResourceWithoutSpans {
                    turn: turn_index,
                    resource: r,
                })
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(AnnotationError::Confidence {
                turn: turn_index,
                value: confidence,
            });
        }
        spans.sort_by_key(|s| (s.start, s.end, s.im_type));
        let coded_types = apply_cooccurrence(&spans.iter().map(|s| s.im_type).collect());
        Ok(Self {
            turn_index,
            annotation_text: annotation_text.into(),
            spans,
            coded_types,
            resource,
            confidence,
            analysis: analysis.into(),
        })
    }

    /// An annotation with no innovative moment.
    pub fn none(turn_index: u32) -> Self {
        Self::new(turn_index, "None", Vec::new(), Resource::None, 1.0, "")
            .expect("valid by construction")
    }

    pub fn turn_index(&self) -> u32 {
        self.turn_index
    }

    pub fn annotation_text(&self) -> &str {
        &self.annotation_text
    }

    pub fn spans(&self) -> &[IMSpan] {
        &self.spans
    }

    pub fn coded_types(&self) -> &IMSet {
        &self.coded_types
    }

    pub fn resource(&self) -> Resource {
        self.resource
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn analysis(&self) -> &str {
        &self.analysis
    }
}
