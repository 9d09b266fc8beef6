//! Model-backed IM classification and the annotation file format.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_im_spans, AnnotationError, IMSpan, IMType, Resource, TurnAnnotation};
use crate::backend::{parse_fenced_yaml, BackendError, CallKind, ChatBackend, ChatMessage};
use crate::par::Execution;
use crate::prompts::{PromptError, PromptSet};
use crate::transcript::{render_dialogue, Transcript, Turn};

const KEYS: [&str; 4] = [
    "annotation",
    "resource",
    "confidence",
    "latent_narrative_dynamics_analysis",
];

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("turn {0}: client utterance is empty")]
    EmptyUtterance(u32),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("turn {turn}: annotation unparseable after retry: {reason}")]
    AnnotationUnparseable { turn: u32, reason: String },
}

/// Classifies client utterances with the annotation prompt.
pub struct Annotator<'a, B: ?Sized> {
    backend: &'a B,
    prompts: &'a PromptSet,
    window: usize,
}

impl<'a, B: ChatBackend + ?Sized> Annotator<'a, B> {
    pub fn new(backend: &'a B, prompts: &'a PromptSet) -> Self {
        Self {
            backend,
            prompts,
            window: 10,
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    fn messages(
        &self,
        utterance: &str,
        history: &Transcript,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        let dialogue = render_dialogue(history.window(self.window));
        let user = self.prompts.render(
            "im_user",
            &[
                ("examples", self.prompts.get("im_examples")?),
                (
                    "history",
                    if dialogue.is_empty() {
                        "(none)"
                    } else {
                        &dialogue
                    },
                ),
                ("utterance", &format!("\"{utterance}\"")),
            ],
        )?;
        Ok(vec![
            ChatMessage::system(self.prompts.get("im_system")?),
            ChatMessage::user(user),
        ])
    }

    /// Annotates `utterance`, the client text of turn `turn_index`, given the
    /// turns before it. Offsets in the result refer to `utterance`.
    pub fn classify(
        &self,
        utterance: &str,
        history: &Transcript,
        turn_index: u32,
    ) -> Result<TurnAnnotation, ClassifyError> {
        if utterance.trim().is_empty() {
            return Err(ClassifyError::EmptyUtterance(turn_index));
        }
        let messages = self.messages(utterance, history)?;
        let mut reason = String::new();
        for _ in 0..2 {
            let raw = self.backend.complete(&messages, CallKind::ImAnnotation)?;
            match interpret(&raw, utterance, turn_index) {
                Ok(a) => return Ok(a),
                Err(e) => {
                    tracing::debug!(turn = turn_index, "annotation rejected: {e}");
                    reason = e;
                }
            }
        }
        Err(ClassifyError::AnnotationUnparseable {
            turn: turn_index,
            reason,
        })
    }

    pub fn classify_turn(
        &self,
        transcript: &Transcript,
        turn: &Turn,
    ) -> Result<TurnAnnotation, ClassifyError> {
        self.classify(
            &turn.client_text,
            &transcript.prefix(turn.index),
            turn.index,
        )
    }
}

fn clean_scalar(raw: &str) -> &str {
    raw.trim()
        .trim_end_matches(',')
        .trim()
        .trim_matches(|c| c == '"' || c == '\'')
        .trim()
}

/// Turns one model completion into an annotation of `utterance`.
fn interpret(raw: &str, utterance: &str, turn: u32) -> Result<TurnAnnotation, String> {
    let fields = parse_fenced_yaml(raw, &KEYS).map_err(|e| e.to_string())?;
    let annotation = clean_scalar(fields.require("annotation").map_err(|e| e.to_string())?);
    let resource = Resource::parse(fields.require("resource").map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let confidence_raw = clean_scalar(fields.require("confidence").map_err(|e| e.to_string())?);
    let confidence: f64 = confidence_raw
        .parse()
        .map_err(|_| format!("confidence {confidence_raw:?} is not a number"))?;
    let analysis = fields
        .require("latent_narrative_dynamics_analysis")
        .map_err(|e| e.to_string())?;
    let spans = if annotation.eq_ignore_ascii_case("none") {
        Vec::new()
    } else {
        let (_, spans) = parse_im_spans(annotation).map_err(|e| e.to_string())?;
        anchor(&spans, utterance)?
    };
    TurnAnnotation::new(turn, annotation, spans, resource, confidence, analysis)
        .map_err(|e| e.to_string())
}

/// Relocates spans parsed from the annotation onto the utterance itself.
fn anchor(spans: &[IMSpan], utterance: &str) -> Result<Vec<IMSpan>, String> {
    let mut cursor = 0;
    spans
        .iter()
        .map(|s| {
            let needle = s.text.trim();
            if needle.is_empty() {
                return Err(format!("blank {} span", s.im_type));
            }
            let start = utterance[cursor..]
                .find(needle)
                .map(|i| i + cursor)
                .or_else(|| utterance.find(needle))
                .ok_or_else(|| {
                    format!("{} span {needle:?} is not part of the utterance", s.im_type)
                })?;
            let end = start + needle.len();
            cursor = end;
            Ok(IMSpan::new(s.im_type, start, end, needle))
        })
        .collect()
}

/// Annotates every turn of a transcript; results are in turn order.
pub fn annotate_transcript<B: ChatBackend + ?Sized>(
    backend: &B,
    prompts: &PromptSet,
    transcript: &Transcript,
    execution: Execution,
) -> Vec<Result<TurnAnnotation, ClassifyError>> {
    let annotator = Annotator::new(backend, prompts);
    execution.map(transcript.turns(), |turn| {
        annotator.classify_turn(transcript, turn)
    })
}

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub session_id: String,
    pub turn: u32,
    pub annotation_text: String,
    pub coded_types: Vec<IMType>,
    pub resource: Resource,
    pub confidence: f64,
    pub analysis: String,
    #[serde(default)]
    pub spans: Vec<IMSpan>,
}

impl AnnotationRecord {
    pub fn new(session_id: impl Into<String>, a: &TurnAnnotation) -> Self {
        Self {
            session_id: session_id.into(),
            turn: a.turn_index(),
            annotation_text: a.annotation_text().to_string(),
            coded_types: a.coded_types().iter().copied().collect(),
            resource: a.resource(),
            confidence: a.confidence(),
            analysis: a.analysis().to_string(),
            spans: a.spans().to_vec(),
        }
    }

    pub fn into_annotation(self) -> Result<(String, TurnAnnotation), AnnotationError> {
        let a = TurnAnnotation::new(
            self.turn,
            self.annotation_text,
            self.spans,
            self.resource,
            self.confidence,
            self.analysis,
        )?;
        if !a.coded_types().iter().eq(self
            .coded_types
            .iter()
            .collect::<std::collections::BTreeSet<_>>())
        {
            return Err(AnnotationError::CodedTypes { turn: self.turn });
        }
        Ok((self.session_id, a))
    }
}

#[derive(Debug, Error)]
pub enum AnnotationFileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Invalid {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub fn write_annotations(
    path: impl AsRef<Path>,
    session_id: &str,
    annotations: &[TurnAnnotation],
) -> Result<(), AnnotationFileError> {
    let path = path.as_ref();
    let io_err = |source| AnnotationFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for a in annotations {
        let line = serde_json::to_string(&AnnotationRecord::new(session_id, a))
            .expect("records serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads and validates every record of an annotation file.
pub fn read_annotations(
    path: impl AsRef<Path>,
) -> Result<Vec<(String, TurnAnnotation)>, AnnotationFileError> {
    let path = path.as_ref();
    let io_err = |source| AnnotationFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |message: String| AnnotationFileError::Invalid {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?;
        out.push(
            record
                .into_annotation()
                .map_err(|e| invalid(e.to_string()))?,
        );
    }
    Ok(out)
}
