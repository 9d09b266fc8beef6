//! Share of a session's words covered by client IM spans.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::words::{Tokenizer, WhitespaceTokenizer};
use super::{IMType, TurnAnnotation};
use crate::transcript::Transcript;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mismatch {
    UnknownTurn,
    DuplicateAnnotation,
    Span { start: usize, end: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SalienceError {
    #[error("annotation of turn {turn} does not fit the transcript: {reason:?}")]
    TurnMismatch { turn: u32, reason: Mismatch },
}

fn mismatch(turn: u32, reason: Mismatch) -> SalienceError {
    SalienceError::TurnMismatch { turn, reason }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceReport {
    pub session_id: String,
    /// Fractions in [0, 1], one entry per IM type.
    pub per_type: BTreeMap<IMType, f64>,
    pub sum: f64,
}

impl SalienceReport {
    pub fn from_per_type(session_id: impl Into<String>, per_type: BTreeMap<IMType, f64>) -> Self {
        let sum = per_type.values().sum();
        Self {
            session_id: session_id.into(),
            per_type,
            sum,
        }
    }

    pub fn get(&self, im_type: IMType) -> f64 {
        self.per_type.get(&im_type).copied().unwrap_or(0.0)
    }

    /// Mean of each type (and of the sums) across reports.
    pub fn mean(session_id: impl Into<String>, reports: &[SalienceReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let per_type = IMType::ALL
            .into_iter()
            .map(|t| (t, reports.iter().map(|r| r.get(t)).sum::<f64>() / n))
            .collect();
        Self::from_per_type(session_id, per_type)
    }
}

fn check(transcript: &Transcript, annotations: &[TurnAnnotation]) -> Result<(), SalienceError> {
    let mut seen = BTreeSet::new();
    for a in annotations {
        let index = a.turn_index();
        let turn = transcript
            .turn(index)
            .ok_or(mismatch(index, Mismatch::UnknownTurn))?;
        if !seen.insert(index) {
            return Err(mismatch(index, Mismatch::DuplicateAnnotation));
        }
        for s in a.spans() {
            if s.start >= s.end || turn.client_text.get(s.start..s.end) != Some(s.text.as_str()) {
                return Err(mismatch(
                    index,
                    Mismatch::Span {
                        start: s.start,
                        end: s.end,
                    },
                ));
            }
        }
    }
    Ok(())
}

fn total_words(transcript: &Transcript, tokenizer: &dyn Tokenizer) -> usize {
    transcript
        .turns()
        .iter()
        .map(|t| tokenizer.count(&t.client_text) + tokenizer.count(&t.therapist_text))
        .sum()
}

fn covered_words(
    transcript: &Transcript,
    annotations: &[TurnAnnotation],
    im_type: IMType,
    tokenizer: &dyn Tokenizer,
) -> usize {
    annotations
        .iter()
        .filter(|a| a.coded_types().contains(&im_type))
        .map(|a| {
            let text = &transcript
                .turn(a.turn_index())
                .expect("checked")
                .client_text;
            let spans: Vec<_> = a.spans().iter().filter(|s| s.im_type == im_type).collect();
            tokenizer
                .word_ranges(text)
                .iter()
                .filter(|w| spans.iter().any(|s| s.overlaps(w)))
                .count()
        })
        .sum()
}

/// Words in client spans of `im_type` over all client and therapist words.
///
/// Only annotations whose coded types include `im_type` contribute, and a
/// word covered by several spans of the type counts once.
pub fn salience(
    transcript: &Transcript,
    annotations: &[TurnAnnotation],
    im_type: IMType,
) -> Result<f64, SalienceError> {
    salience_with(transcript, annotations, im_type, &WhitespaceTokenizer)
}

pub fn salience_with(
    transcript: &Transcript,
    annotations: &[TurnAnnotation],
    im_type: IMType,
    tokenizer: &dyn Tokenizer,
) -> Result<f64, SalienceError> {
    check(transcript, annotations)?;
    let total = total_words(transcript, tokenizer);
    if total == 0 {
        return Ok(0.0);
    }
    Ok(covered_words(transcript, annotations, im_type, tokenizer) as f64 / total as f64)
}

pub fn salience_report(
    transcript: &Transcript,
    annotations: &[TurnAnnotation],
) -> Result<SalienceReport, SalienceError> {
    salience_report_with(transcript, annotations, &WhitespaceTokenizer)
}

pub fn salience_report_with(
    transcript: &Transcript,
    annotations: &[TurnAnnotation],
    tokenizer: &dyn Tokenizer,
) -> Result<SalienceReport, SalienceError> {
    check(transcript, annotations)?;
    let total = total_words(transcript, tokenizer);
    let per_type = IMType::ALL
        .into_iter()
        .map(|t| {
            let value = if total == 0 {
                0.0
            } else {
                covered_words(transcript, annotations, t, tokenizer) as f64 / total as f64
            };
            (t, value)
        })
        .collect();
    Ok(SalienceReport::from_per_type(
        transcript.session_id(),
        per_type,
    ))
}
