//! Dimension scoring of whole transcripts by a supervisor prompt.
//!
//! Scores sit on a half-point grid from 1 to 5. The session average uses the
//! four core dimensions; Humaneness is scored but kept out of it.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::backend::{parse_fenced_yaml, BackendError, CallKind, ChatBackend, ChatMessage};
use crate::par::Execution;
use crate::prompts::{PromptError, PromptSet};
use crate::transcript::{render_dialogue, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dimension {
    Reassuring,
    Empowering,
    Transformative,
    Reconnecting,
    Humaneness,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown dimension `{0}`")]
pub struct UnknownDimension(pub String);

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Reassuring,
        Dimension::Empowering,
        Dimension::Transformative,
        Dimension::Reconnecting,
        Dimension::Humaneness,
    ];

    /// The dimensions that enter the average.
    pub const CORE: [Dimension; 4] = [
        Dimension::Reassuring,
        Dimension::Empowering,
        Dimension::Transformative,
        Dimension::Reconnecting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Reassuring => "Reassuring",
            Dimension::Empowering => "Empowering",
            Dimension::Transformative => "Transformative",
            Dimension::Reconnecting => "Reconnecting",
            Dimension::Humaneness => "Humaneness",
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            Dimension::Reassuring => {
                "How safe the client is made to feel about opening up. The counsellor listens closely, shows warmth and accepts what is said without judging it."
            }
            Dimension::Empowering => {
                "How much the counsellor helps the client notice their own abilities and choices and step out from under the problem."
            }
            Dimension::Transformative => {
                "How well the counsellor helps the client look at the problem from a new angle and start shaping a different story about it."
            }
            Dimension::Reconnecting => {
                "How far the counsellor links the client back to the people, communities and values that support who they want to be."
            }
            Dimension::Humaneness => {
                "How natural, caring and person-like the counsellor sounds, as opposed to scripted or mechanical."
            }
        }
    }

    pub fn criteria(self) -> &'static str {
        match self {
            Dimension::Reassuring => {
                "- Feelings are reflected accurately and acknowledged.\n- The tone is patient and free of blame.\n- The client is given room to say more at their own pace."
            }
            Dimension::Empowering => {
                "- Past successes and strengths are drawn out and named.\n- The problem is spoken of as separate from the person.\n- The client is invited to choose next steps."
            }
            Dimension::Transformative => {
                "- Exceptions to the problem story are explored in detail.\n- Questions link those exceptions to values and identity.\n- A preferred direction becomes clearer over the dialogue."
            }
            Dimension::Reconnecting => {
                "- Important relationships are brought into the conversation.\n- The client considers how others see them and how they affect others.\n- Support outside the session is identified."
            }
            Dimension::Humaneness => {
                "- Replies respond to the specific things the client said.\n- Wording varies and avoids stock phrases.\n- Empathy sounds sincere rather than formulaic."
            }
        }
    }

    pub fn is_core(self) -> bool {
        self != Dimension::Humaneness
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = UnknownDimension;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownDimension(s.to_string()))
    }
}

impl Serialize for Dimension {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Dimension {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum SupervisorError {
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("{dimension}: score {score} is not on the 0.5 grid from 1 to 5")]
    OffGridScore { dimension: Dimension, score: f64 },
    #[error("{dimension}: unparseable evaluation: {reason}")]
    Unparseable {
        dimension: Dimension,
        reason: String,
    },
    #[error("missing dimension {0}")]
    MissingDimension(Dimension),
    #[error("dimension {0} given more than once")]
    DuplicateDimension(Dimension),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

pub fn on_grid(score: f64) -> bool {
    (1.0..=5.0).contains(&score) && (score * 2.0).fract() == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    pub dimension: Dimension,
    pub score: f64,
    pub explanation: String,
}

/// Half-up rounding of a non-negative value to `places` decimals, tolerant
/// of representation error just below the midpoint.
pub fn round_half_up(value: f64, places: i32) -> f64 {
    let scale = 10f64.powi(places);
    (value * scale + 0.5 + 1e-9).floor() / scale
}

/// Mean of the four core dimensions, rounded half-up to 2 decimals.
pub fn average_of(scores: &[(Dimension, f64)]) -> Result<f64, SupervisorError> {
    let mut by_dim = BTreeMap::new();
    for &(d, s) in scores.iter().filter(|(d, _)| d.is_core()) {
        if by_dim.insert(d, s).is_some() {
            return Err(SupervisorError::DuplicateDimension(d));
        }
    }
    if let Some(&missing) = Dimension::CORE.iter().find(|d| !by_dim.contains_key(d)) {
        return Err(SupervisorError::MissingDimension(missing));
    }
    let mean = by_dim.values().sum::<f64>() / by_dim.len() as f64;
    Ok(round_half_up(mean, 2))
}

pub fn average_score(scores: &[DimensionScore]) -> Result<f64, SupervisorError> {
    let pairs: Vec<(Dimension, f64)> = scores.iter().map(|s| (s.dimension, s.score)).collect();
    average_of(&pairs)
}

fn interpret(raw: &str, dimension: Dimension) -> Result<DimensionScore, SupervisorError> {
    let unparseable = |reason: String| SupervisorError::Unparseable { dimension, reason };
    let fields =
        parse_fenced_yaml(raw, &["explanation"]).map_err(|e| unparseable(e.to_string()))?;
    let value = fields
        .get(dimension.name())
        .or_else(|| fields.get("score"))
        .ok_or_else(|| unparseable(format!("no `{}` or `score` key", dimension.name())))?;
    let score: f64 = value
        .trim()
        .trim_end_matches([',', '.'])
        .split('/')
        .next()
        .unwrap_or_default()
        .trim()
        .parse()
        .map_err(|_| unparseable(format!("score `{value}` is not a number")))?;
    if !on_grid(score) {
        return Err(SupervisorError::OffGridScore { dimension, score });
    }
    Ok(DimensionScore {
        dimension,
        score,
        explanation: fields.get("explanation").unwrap_or_default().to_string(),
    })
}

/// Rates one dimension; an unusable answer is retried once.
pub fn evaluate_dimension<B: ChatBackend + ?Sized>(
    backend: &B,
    prompts: &PromptSet,
    transcript: &Transcript,
    dimension: Dimension,
) -> Result<DimensionScore, SupervisorError> {
    if transcript.is_empty() {
        return Err(SupervisorError::EmptyTranscript);
    }
    let user = prompts.render(
        "supervisor_user",
        &[
            ("dimension", dimension.name()),
            ("definition", dimension.definition()),
            ("criteria", dimension.criteria()),
            ("dialogue", &render_dialogue(transcript.turns())),
        ],
    )?;
    let messages = [
        ChatMessage::system(prompts.get("supervisor_system")?),
        ChatMessage::user(user),
    ];
    let mut last = None;
    for _ in 0..2 {
        let raw = backend.complete(&messages, CallKind::DimensionEvaluation)?;
        match interpret(&raw, dimension) {
            Ok(s) => return Ok(s),
            Err(e) => {
                tracing::debug!("{e}");
                last = Some(e);
            }
        }
    }
    Err(last.expect("two attempts made"))
}

/// Rates every dimension; results follow [`Dimension::ALL`].
pub fn evaluate_transcript<B: ChatBackend + ?Sized>(
    backend: &B,
    prompts: &PromptSet,
    transcript: &Transcript,
    execution: Execution,
) -> Vec<Result<DimensionScore, SupervisorError>> {
    execution.map(&Dimension::ALL, |&d| {
        evaluate_dimension(backend, prompts, transcript, d)
    })
}

/// One line of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub session_id: String,
    pub dimension: Dimension,
    pub score: f64,
    #[serde(default)]
    pub explanation: String,
}

#[derive(Debug, Error)]
pub enum ScoreFileError {
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

pub fn write_scores(
    path: impl AsRef<Path>,
    session_id: &str,
    scores: &[DimensionScore],
) -> Result<(), ScoreFileError> {
    let path = path.as_ref();
    let io_err = |source| ScoreFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for s in scores {
        let rec = ScoreRecord {
            session_id: session_id.to_string(),
            dimension: s.dimension,
            score: s.score,
            explanation: s.explanation.clone(),
        };
        writeln!(
            w,
            "{}",
            serde_json::to_string(&rec).expect("records serialize")
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads a score file. Scores are not grid-checked so human ratings and
/// averaged values can be ingested too.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>, ScoreFileError> {
    let path = path.as_ref();
    let io_err = |source| ScoreFileError::Io {
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
        let rec: ScoreRecord =
            serde_json::from_str(&line).map_err(|e| ScoreFileError::Invalid {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if !rec.score.is_finite() {
            return Err(ScoreFileError::Invalid {
                path: path.to_path_buf(),
                line: i + 1,
                message: "score is not finite".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Per-dimension mean over score records.
pub fn dimension_means(records: &[ScoreRecord]) -> BTreeMap<Dimension, f64> {
    let mut acc: BTreeMap<Dimension, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.dimension).or_default();
        e.0 += r.score;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(d, (sum, n))| (d, sum / n as f64))
        .collect()
}
