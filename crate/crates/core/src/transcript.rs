//! Session transcripts and their line-delimited file format.
//!
//! A transcript file holds one JSON header record followed by one JSON record
//! per committed turn, each newline-terminated:
//!
//! ```text
//! {"session_id":"s1","profile_ref":null,"created_at":"2025-01-01T00:00:00Z","variant":"full"}
//! {"turn":1,"client_text":"...","therapist_text":"...","stage":"Trust Building","level":"Exploration of Problem Event","exemplar_ids":["tb-1"]}
//! ```
//!
//! Turns produced without planning (the role-play baseline) omit `stage`,
//! `level` and `exemplar_ids`.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{validate_state, Stage, TaxonomyError, TherapeuticState};

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("{speaker:?} text of turn {turn} is empty")]
    EmptyText { turn: u32, speaker: Speaker },
    #[error("turn {found} out of sequence, expected {expected}")]
    OutOfSequence { expected: u32, found: u32 },
    #[error("transcript has no header record")]
    MissingHeader,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    InvalidState {
        line: usize,
        #[source]
        source: TaxonomyError,
    },
    #[error("stage and level must be given together (turn {0})")]
    PartialState(u32),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Pipeline configuration a session was produced with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Stage and level planning plus exemplar retrieval.
    Full,
    /// Planning without retrieval.
    NoRag,
    /// Stage planning only: no level planning, no retrieval.
    NoRagrl,
    /// Single role-play prompt, no planning.
    RolePlay,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoRag,
        Variant::NoRagrl,
        Variant::RolePlay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRag => "no_rag",
            Variant::NoRagrl => "no_ragrl",
            Variant::RolePlay => "role_play",
        }
    }

    pub fn plans_state(self) -> bool {
        self != Variant::RolePlay
    }

    pub fn plans_level(self) -> bool {
        matches!(self, Variant::Full | Variant::NoRag)
    }

    pub fn retrieves(self) -> bool {
        self == Variant::Full
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown variant `{0}` (expected full, no_rag, no_ragrl or role_play)")]
pub struct UnknownVariant(pub String);

impl FromStr for Variant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" | "int" => Ok(Variant::Full),
            "no_rag" => Ok(Variant::NoRag),
            "no_ragrl" => Ok(Variant::NoRagrl),
            "role_play" | "roleplay" => Ok(Variant::RolePlay),
            _ => Err(UnknownVariant(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    Client,
    Therapist,
}

/// One side of a turn, as a view over [`Turn`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Utterance<'a> {
    pub speaker: Speaker,
    pub text: &'a str,
    pub turn_index: u32,
}

/// A client utterance and the therapist reply to it, plus the planner trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub index: u32,
    pub client_text: String,
    pub therapist_text: String,
    pub state: Option<TherapeuticState>,
    pub exemplar_ids: Vec<String>,
}

impl Turn {
    pub fn client(&self) -> Utterance<'_> {
        Utterance {
            speaker: Speaker::Client,
            text: &self.client_text,
            turn_index: self.index,
        }
    }

    pub fn therapist(&self) -> Utterance<'_> {
        Utterance {
            speaker: Speaker::Therapist,
            text: &self.therapist_text,
            turn_index: self.index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub session_id: String,
    #[serde(default)]
    pub profile_ref: Option<String>,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TurnRecord {
    turn: u32,
    client_text: String,
    therapist_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    level: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    exemplar_ids: Vec<String>,
}

impl From<&Turn> for TurnRecord {
    fn from(turn: &Turn) -> Self {
        TurnRecord {
            turn: turn.index,
            client_text: turn.client_text.clone(),
            therapist_text: turn.therapist_text.clone(),
            stage: turn.state.map(|s| s.stage()),
            level: turn.state.map(|s| s.level().name.to_string()),
            exemplar_ids: turn.exemplar_ids.clone(),
        }
    }
}

impl TurnRecord {
    fn into_turn(self, line: usize) -> Result<Turn, TranscriptError> {
        let state = match (self.stage, self.level) {
            (Some(stage), Some(level)) => Some(
                validate_state(stage, &level)
                    .map_err(|source| TranscriptError::InvalidState { line, source })?,
            ),
            (None, None) => None,
            _ => return Err(TranscriptError::PartialState(self.turn)),
        };
        Ok(Turn {
            index: self.turn,
            client_text: self.client_text,
            therapist_text: self.therapist_text,
            state,
            exemplar_ids: self.exemplar_ids,
        })
    }
}

/// An ordered session of turns. Turn indices are contiguous from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    header: TranscriptHeader,
    turns: Vec<Turn>,
}

impl Transcript {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self::with_header(TranscriptHeader {
            session_id: session_id.into(),
            profile_ref: None,
            created_at: Utc::now(),
            variant: None,
        })
    }

    pub fn with_header(header: TranscriptHeader) -> Self {
        Self {
            header,
            turns: Vec::new(),
        }
    }

    pub fn header(&self) -> &TranscriptHeader {
        &self.header
    }

    pub fn header_mut(&mut self) -> &mut TranscriptHeader {
        &mut self.header
    }

    pub fn session_id(&self) -> &str {
        &self.header.session_id
    }

    pub fn variant(&self) -> Option<Variant> {
        self.header.variant
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn turn(&self, index: u32) -> Option<&Turn> {
        usize::try_from(index)
            .ok()?
            .checked_sub(1)
            .and_then(|i| self.turns.get(i))
    }

    pub fn next_index(&self) -> u32 {
        self.turns.len() as u32 + 1
    }

    /// The most recent `window` turns, oldest first.
    pub fn window(&self, window: usize) -> &[Turn] {
        &self.turns[self.turns.len().saturating_sub(window)..]
    }

    /// State of the most recent turn that carries one.
    pub fn last_state(&self) -> Option<TherapeuticState> {
        self.turns.iter().rev().find_map(|t| t.state)
    }

    /// The transcript as it stood before turn `index` (turns `1..index`).
    pub fn prefix(&self, index: u32) -> Transcript {
        let keep = (index.saturating_sub(1) as usize).min(self.turns.len());
        Transcript {
            header: self.header.clone(),
            turns: self.turns[..keep].to_vec(),
        }
    }

    pub fn utterances(&self) -> impl Iterator<Item = Utterance<'_>> {
        self.turns.iter().flat_map(|t| [t.client(), t.therapist()])
    }

    /// Appends a turn with the next index.
    pub fn push(
        &mut self,
        client_text: impl Into<String>,
        therapist_text: impl Into<String>,
        state: Option<TherapeuticState>,
        exemplar_ids: Vec<String>,
    ) -> Result<&Turn, TranscriptError> {
        let turn = Turn {
            index: self.next_index(),
            client_text: client_text.into(),
            therapist_text: therapist_text.into(),
            state,
            exemplar_ids,
        };
        self.push_turn(turn)
    }

    pub fn push_turn(&mut self, turn: Turn) -> Result<&Turn, TranscriptError> {
        let expected = self.next_index();
        if turn.index != expected {
            return Err(TranscriptError::OutOfSequence {
                expected,
                found: turn.index,
            });
        }
        for (speaker, text) in [
            (Speaker::Client, &turn.client_text),
            (Speaker::Therapist, &turn.therapist_text),
        ] {
            if text.trim().is_empty() {
                return Err(TranscriptError::EmptyText {
                    turn: turn.index,
                    speaker,
                });
            }
        }
        self.turns.push(turn);
        Ok(self.turns.last().expect("just pushed"))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = encode_line(&self.header);
        for turn in &self.turns {
            out.push_str(&encode_turn(turn));
        }
        out
    }

    /// Strict parse: every line must be a complete, valid record.
    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header_line) = lines.next().ok_or(TranscriptError::MissingHeader)?;
        let header: TranscriptHeader =
            serde_json::from_str(header_line).map_err(|e| TranscriptError::Malformed {
                line: 1,
                message: e.to_string(),
            })?;
        let mut transcript = Transcript::with_header(header);
        for (i, line) in lines {
            let record: TurnRecord =
                serde_json::from_str(line).map_err(|e| TranscriptError::Malformed {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            transcript.push_turn(record.into_turn(i + 1)?)?;
        }
        Ok(transcript)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TranscriptError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TranscriptError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

fn encode_line<T: Serialize>(value: &T) -> String {
    let mut line = serde_json::to_string(value).expect("records serialize");
    line.push('\n');
    line
}

fn encode_turn(turn: &Turn) -> String {
    encode_line(&TurnRecord::from(turn))
}

/// Plain-text rendering of turns for prompts, one `Client:`/`Therapist:`
/// line each. Empty for no turns.
pub fn render_dialogue(turns: &[Turn]) -> String {
    let mut out = String::new();
    for t in turns {
        out.push_str(&format!(
            "Client: {}\nTherapist: {}\n",
            t.client_text, t.therapist_text
        ));
    }
    out.truncate(out.trim_end().len());
    out
}

/// Result of reading a transcript file that may have been cut off mid-write.
#[derive(Debug)]
pub struct Recovered {
    pub transcript: Transcript,
    /// Byte length of the committed prefix.
    pub committed_len: u64,
    /// Bytes past the committed prefix that were discarded.
    pub discarded_bytes: u64,
}

/// Reads the committed prefix of a transcript file.
///
/// A trailing record without its terminating newline is a torn write and is
/// dropped; any other malformed record is an error.
pub fn read_committed(path: impl AsRef<Path>) -> Result<Recovered, TranscriptError> {
    let bytes = std::fs::read(path)?;
    let committed_len = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let text =
        std::str::from_utf8(&bytes[..committed_len]).map_err(|e| TranscriptError::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
    Ok(Recovered {
        transcript: Transcript::from_jsonl(text)?,
        committed_len: committed_len as u64,
        discarded_bytes: (bytes.len() - committed_len) as u64,
    })
}

/// Append-only, write-ahead transcript file. Each append is flushed and
/// synced before returning, so an acknowledged turn survives a crash.
#[derive(Debug)]
pub struct TranscriptWriter {
    path: PathBuf,
    file: File,
}

impl TranscriptWriter {
    /// Creates a new file and writes the header record.
    pub fn create(
        path: impl AsRef<Path>,
        header: &TranscriptHeader,
    ) -> Result<Self, TranscriptError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)?;
        file.write_all(encode_line(header).as_bytes())?;
        file.sync_all()?;
        Ok(Self { path, file })
    }

    /// Creates the file and writes every turn already in `transcript`.
    pub fn create_with(
        path: impl AsRef<Path>,
        transcript: &Transcript,
    ) -> Result<Self, TranscriptError> {
        let mut writer = Self::create(path, transcript.header())?;
        for turn in transcript.turns() {
            writer.append(turn)?;
        }
        Ok(writer)
    }

    /// Reopens an existing file, truncating any torn trailing record.
    pub fn resume(path: impl AsRef<Path>) -> Result<(Self, Transcript), TranscriptError> {
        let path = path.as_ref().to_path_buf();
        let recovered = read_committed(&path)?;
        let file = OpenOptions::new().write(true).open(&path)?;
        if recovered.discarded_bytes > 0 {
            file.set_len(recovered.committed_len)?;
            file.sync_all()?;
        }
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok((Self { path, file }, recovered.transcript))
    }

    pub fn append(&mut self, turn: &Turn) -> Result<(), TranscriptError> {
        self.file.write_all(encode_turn(turn).as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Reads every `*.jsonl` transcript in a directory, sorted by file name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, Transcript)>, TranscriptError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| Transcript::load(&p).map(|t| (p, t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::Stage;

    fn sample() -> Transcript {
        let mut t = Transcript::new("s-1");
        t.header_mut().variant = Some(Variant::Full);
        t.push(
            "I feel stuck.",
            "Can you tell me more?",
            Some(TherapeuticState::initial(Stage::TrustBuilding)),
            vec!["tb-1".into()],
        )
        .unwrap();
        t.push(
            "It follows me everywhere.",
            "What do you call it?",
            Some(TherapeuticState::new(Stage::ProblemExternalization, 1).unwrap()),
            vec![],
        )
        .unwrap();
        t.push("ok", "mm", None, vec![]).unwrap();
        t
    }

    #[test]
    fn jsonl_round_trip() {
        let t = sample();
        let text = t.to_jsonl();
        assert!(text.ends_with('\n'));
        assert_eq!(text.lines().count(), 4);
        assert_eq!(Transcript::from_jsonl(&text).unwrap(), t);
    }

    #[test]
    fn stateless_turn_omits_fields() {
        let text = sample().to_jsonl();
        let last = text.lines().last().unwrap();
        assert!(!last.contains("stage"));
        assert!(!last.contains("exemplar_ids"));
    }

    #[test]
    fn rejects_empty_text_and_gaps() {
        let mut t = Transcript::new("x");
        assert!(matches!(
            t.push("  ", "a", None, vec![]),
            Err(TranscriptError::EmptyText { .. })
        ));
        let gap = "{\"session_id\":\"x\",\"created_at\":\"2025-01-01T00:00:00Z\"}\n{\"turn\":2,\"client_text\":\"a\",\"therapist_text\":\"b\"}\n";
        assert!(matches!(
            Transcript::from_jsonl(gap),
            Err(TranscriptError::OutOfSequence { .. })
        ));
        assert!(matches!(
            Transcript::from_jsonl(""),
            Err(TranscriptError::MissingHeader)
        ));
    }

    #[test]
    fn rejects_cross_stage_level() {
        let text = "{\"session_id\":\"x\",\"created_at\":\"2025-01-01T00:00:00Z\"}\n{\"turn\":1,\"client_text\":\"a\",\"therapist_text\":\"b\",\"stage\":\"Trust Building\",\"level\":\"Exploration of Action Landscape\"}\n";
        assert!(matches!(
            Transcript::from_jsonl(text),
            Err(TranscriptError::InvalidState { .. })
        ));
    }

    #[test]
    fn writer_resume_truncates_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let t = sample();
        let mut w = TranscriptWriter::create(&path, t.header()).unwrap();
        for turn in &t.turns()[..2] {
            w.append(turn).unwrap();
        }
        drop(w);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"turn\":3,\"client_te").unwrap();
        drop(f);

        let rec = read_committed(&path).unwrap();
        assert_eq!(rec.transcript.len(), 2);
        assert!(rec.discarded_bytes > 0);

        let (mut w, resumed) = TranscriptWriter::resume(&path).unwrap();
        assert_eq!(resumed.len(), 2);
        w.append(&t.turns()[2]).unwrap();
        assert_eq!(Transcript::load(&path).unwrap(), t);
    }

    #[test]
    fn window_and_prefix() {
        let t = sample();
        assert_eq!(t.window(2).len(), 2);
        assert_eq!(t.window(2)[0].index, 2);
        assert_eq!(t.window(10).len(), 3);
        assert_eq!(t.prefix(1).len(), 0);
        assert_eq!(t.prefix(3).len(), 2);
        assert_eq!(
            t.last_state().unwrap().stage(),
            Stage::ProblemExternalization
        );
        assert_eq!(t.utterances().count(), 6);
    }

    #[test]
    fn variant_parsing() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("fancy".parse::<Variant>().is_err());
    }
}
