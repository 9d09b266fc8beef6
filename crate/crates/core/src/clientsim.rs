//! Simulated clients: profiles, cooperation levels and the reply loop.

use std::collections::{BTreeSet, VecDeque};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{parse_fenced_yaml, BackendError, CallKind, ChatBackend, ChatMessage};
use crate::ima::word_ranges;
use crate::prompts::{PromptError, PromptSet};
use crate::transcript::Transcript;

pub const CLIENT_WORD_CAP: usize = 30;

/// Therapist line the simulated client answers at turn 1.
pub const DEFAULT_OPENING: &str =
    "Hi, I'm glad you came in today. What would you like to talk about?";

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("record {record}: {message}")]
    ParseError { record: usize, message: String },
    #[error("duplicate profile id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("client reply unparseable after retry: {0}")]
    Unparseable(String),
    #[error("scripted client has no more lines")]
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub id: String,
    #[serde(default)]
    pub demographics: String,
    pub background_story: String,
    #[serde(default)]
    pub emotional_state: String,
    pub core_concerns: String,
}

impl ClientProfile {
    fn validate(&self) -> Result<(), String> {
        for (name, value) in [
            ("id", &self.id),
            ("background_story", &self.background_story),
            ("core_concerns", &self.core_concerns),
        ] {
            if value.trim().is_empty() {
                return Err(format!("field `{name}` is empty"));
            }
        }
        Ok(())
    }

    /// Profile block inserted into the client system prompt.
    pub fn describe(&self) -> String {
        let or_unknown = |s: &str| {
            if s.trim().is_empty() {
                "not given".to_string()
            } else {
                s.trim().to_string()
            }
        };
        format!(
            "Demographics: {}\nBackground: {}\nEmotional state: {}\nCore concerns: {}",
            or_unknown(&self.demographics),
            self.background_story.trim(),
            or_unknown(&self.emotional_state),
            self.core_concerns.trim()
        )
    }
}

/// Parses a profile file: one JSON object per line.
pub fn parse_profiles(text: &str) -> Result<Vec<ClientProfile>, ProfileError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let record = i + 1;
        let p: ClientProfile =
            serde_json::from_str(line).map_err(|e| ProfileError::ParseError {
                record,
                message: e.to_string(),
            })?;
        p.validate()
            .map_err(|message| ProfileError::ParseError { record, message })?;
        if !seen.insert(p.id.clone()) {
            return Err(ProfileError::DuplicateId(p.id));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<ClientProfile>, ProfileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_profiles(&text)
}

pub fn write_profiles(
    path: impl AsRef<Path>,
    profiles: &[ClientProfile],
) -> Result<(), ProfileError> {
    let path = path.as_ref();
    let io_err = |source| ProfileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for p in profiles {
        writeln!(
            w,
            "{}",
            serde_json::to_string(p).expect("profiles serialize")
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Builds profiles from ESConv-style dialogue records.
///
/// Accepts a JSON array or one object per line. Field mapping:
///
/// | profile            | source                                                  |
/// |--------------------|---------------------------------------------------------|
/// | `id`               | `esconv-<n>`, n = 1-based record position               |
/// | `demographics`     | `demographics` if present, else empty                   |
/// | `background_story` | `situation`                                             |
/// | `emotional_state`  | `emotion_type`, plus `survey_score.seeker.initial_emotion_intensity` as "(intensity k/5)" |
/// | `core_concerns`    | `problem_type`, with `experience_type` appended when present |
///
/// Records lacking `situation` or `problem_type` are skipped.
pub fn ingest_esconv(text: &str) -> Result<Vec<ClientProfile>, ProfileError> {
    let records: Vec<Value> = match serde_json::from_str::<Value>(text) {
        Ok(Value::Array(items)) => items,
        Ok(other) => vec![other],
        Err(_) => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| ProfileError::ParseError {
                    record: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?,
    };
    let field = |v: &Value, key: &str| {
        v.get(key)
            .and_then(Value::as_str)
            .map(str::trim)
            .unwrap_or("")
            .to_string()
    };
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let situation = field(r, "situation");
        let problem = field(r, "problem_type");
        if situation.is_empty() || problem.is_empty() {
            tracing::debug!(
                record = i + 1,
                "skipping record without situation or problem_type"
            );
            continue;
        }
        let mut emotional_state = field(r, "emotion_type");
        let intensity = r
            .pointer("/survey_score/seeker/initial_emotion_intensity")
            .and_then(|v| {
                v.as_str()
                    .map(str::to_string)
                    .or_else(|| v.as_i64().map(|n| n.to_string()))
            });
        if let Some(k) = intensity.filter(|k| !k.is_empty()) {
            emotional_state = format!("{emotional_state} (intensity {k}/5)")
                .trim()
                .to_string();
        }
        let experience = field(r, "experience_type");
        let core_concerns = if experience.is_empty() {
            problem
        } else {
            format!("{problem}; {experience}")
        };
        out.push(ClientProfile {
            id: format!("esconv-{}", i + 1),
            demographics: field(r, "demographics"),
            background_story: situation,
            emotional_state,
            core_concerns,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooperationLevel {
    pub label: String,
    pub description: String,
}

impl CooperationLevel {
    pub fn new(label: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            description: description.into(),
        }
    }
}

/// The three levels shipped by default.
pub fn default_cooperation_levels() -> Vec<CooperationLevel> {
    vec![
        CooperationLevel::new(
            "low",
            "You are guarded. Give short, vague answers, sometimes deflect questions and only share details when pressed.",
        ),
        CooperationLevel::new(
            "medium",
            "You are willing but hesitant. Answer the question asked and add a little detail when it feels safe.",
        ),
        CooperationLevel::new(
            "high",
            "You are open. Answer fully, volunteer concrete events and feelings and follow the counsellor's suggestions.",
        ),
    ]
}

/// Truncates `text` after its `cap`-th word. Texts within the cap are only trimmed.
pub fn enforce_word_cap(text: &str, cap: usize) -> String {
    let ranges = word_ranges(text);
    if ranges.len() <= cap {
        return text.trim().to_string();
    }
    match cap.checked_sub(1).and_then(|i| ranges.get(i)) {
        Some(last) => text[..last.end].trim().to_string(),
        None => String::new(),
    }
}

/// Anything that can produce the client side of a turn.
pub trait ClientAgent: Send + Sync {
    /// Next client utterance given the committed turns and the therapist line
    /// being answered.
    fn reply(&self, history: &Transcript, last_therapist: &str) -> Result<String, ClientError>;

    fn profile_ref(&self) -> Option<String> {
        None
    }
}

/// Model-driven client following a profile and a cooperation level.
#[derive(Clone)]
pub struct SimulatedClient {
    backend: Arc<dyn ChatBackend>,
    prompts: Arc<PromptSet>,
    profile: ClientProfile,
    cooperation: CooperationLevel,
    opening: String,
    word_cap: usize,
}

impl SimulatedClient {
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        prompts: Arc<PromptSet>,
        profile: ClientProfile,
        cooperation: CooperationLevel,
    ) -> Self {
        Self {
            backend,
            prompts,
            profile,
            cooperation,
            opening: DEFAULT_OPENING.to_string(),
            word_cap: CLIENT_WORD_CAP,
        }
    }

    /// The therapist opening used as context for later turns.
    pub fn with_opening(mut self, opening: impl Into<String>) -> Self {
        self.opening = opening.into();
        self
    }

    pub fn with_word_cap(mut self, cap: usize) -> Self {
        self.word_cap = cap;
        self
    }

    pub fn profile(&self) -> &ClientProfile {
        &self.profile
    }

    /// The client speaks as the assistant; the counsellor's latest line goes
    /// into the final user prompt rather than the replayed history.
    pub fn messages(
        &self,
        history: &Transcript,
        last_therapist: &str,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        let system = self
            .prompts
            .render("client_system", &[("profile", &self.profile.describe())])?;
        let mut messages = vec![ChatMessage::system(system)];
        if !history.is_empty() {
            messages.push(ChatMessage::user(self.opening.clone()));
        }
        let turns = history.turns();
        for (i, t) in turns.iter().enumerate() {
            messages.push(ChatMessage::assistant(t.client_text.clone()));
            if i + 1 < turns.len() {
                messages.push(ChatMessage::user(t.therapist_text.clone()));
            }
        }
        let user = self.prompts.render(
            "client_user",
            &[
                ("cooperation_label", &self.cooperation.label),
                ("cooperation_description", &self.cooperation.description),
                ("last_therapist", last_therapist),
            ],
        )?;
        messages.push(ChatMessage::user(user));
        Ok(messages)
    }
}

/// Returns the simulated client's reply from a raw model completion.
pub fn parse_client_reply(raw: &str) -> Result<String, String> {
    let fields = parse_fenced_yaml(raw, &["user"]).map_err(|e| e.to_string())?;
    let text = fields.require("user").map_err(|e| e.to_string())?.trim();
    if text.is_empty() {
        return Err("empty reply".into());
    }
    Ok(text.to_string())
}

/// Parses and caps one model completion.
pub fn simulate_reply_from(raw: &str, cap: usize) -> Result<String, String> {
    let text = enforce_word_cap(&parse_client_reply(raw)?, cap);
    if text.is_empty() {
        return Err("reply has no words".into());
    }
    Ok(text)
}

impl ClientAgent for SimulatedClient {
    fn reply(&self, history: &Transcript, last_therapist: &str) -> Result<String, ClientError> {
        let messages = self.messages(history, last_therapist)?;
        let mut reason = String::new();
        for _ in 0..2 {
            let raw = self
                .backend
                .complete(&messages, CallKind::ClientSimulation)?;
            match simulate_reply_from(&raw, self.word_cap) {
                Ok(text) => return Ok(text),
                Err(e) => reason = e,
            }
        }
        Err(ClientError::Unparseable(reason))
    }

    fn profile_ref(&self) -> Option<String> {
        Some(self.profile.id.clone())
    }
}

/// Plays back fixed client lines in order.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    lines: Mutex<VecDeque<String>>,
}

impl ScriptedClient {
    pub fn new<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            lines: Mutex::new(lines.into_iter().map(Into::into).collect()),
        }
    }
}

impl ClientAgent for ScriptedClient {
    fn reply(&self, _history: &Transcript, _last_therapist: &str) -> Result<String, ClientError> {
        self.lines
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front()
            .ok_or(ClientError::Exhausted)
    }
}
