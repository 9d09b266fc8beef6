//! On-disk layout: `sessions.jsonl` (append-only index of lifecycle events)
//! and one transcript file `<session_id>.jsonl` per session.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use narrative_core::transcript::{TranscriptHeader, TranscriptWriter};
use narrative_core::{Transcript, Variant};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub const INDEX_FILE: &str = "sessions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub variant: Variant,
    pub created_at: DateTime<Utc>,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_ref: Option<String>,
    pub transcript_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum IndexEvent {
    Created {
        session_id: String,
        variant: Variant,
        created_at: DateTime<Utc>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile_ref: Option<String>,
    },
    Closed {
        session_id: String,
        at: DateTime<Utc>,
    },
}

/// A session reloaded from disk, ready to accept further turns.
#[derive(Debug)]
pub struct StoredSession {
    pub record: SessionRecord,
    pub transcript: Transcript,
    pub writer: TranscriptWriter,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    index: Mutex<File>,
}

fn storage(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Storage(e.to_string())
}

/// Complete index lines; a torn final line is cut off the file.
fn read_index(path: &Path) -> Result<Vec<IndexEvent>, ServiceError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = fs::read(path)?;
    let committed = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    if committed < bytes.len() {
        tracing::warn!(
            discarded = bytes.len() - committed,
            "truncating torn index record"
        );
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(committed as u64)?;
        f.sync_all()?;
    }
    let text = std::str::from_utf8(&bytes[..committed]).map_err(storage)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| storage(format!("{INDEX_FILE} line {}: {e}", i + 1)))
        })
        .collect()
}

impl Store {
    /// Opens (or creates) a data directory and recovers every session in it.
    ///
    /// Transcript files missing from the index are adopted; index entries
    /// whose transcript file is missing get an empty file.
    pub fn open(dir: impl AsRef<Path>) -> Result<(Store, Vec<StoredSession>), ServiceError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let index_path = dir.join(INDEX_FILE);
        let events = read_index(&index_path)?;
        let index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index_path)?;
        let store = Store {
            dir,
            index: Mutex::new(index),
        };

        let mut known: BTreeMap<String, SessionRecord> = BTreeMap::new();
        for event in events {
            match event {
                IndexEvent::Created {
                    session_id,
                    variant,
                    created_at,
                    profile_ref,
                } => {
                    let transcript_ref = store.file_name(&session_id);
                    known.insert(
                        session_id.clone(),
                        SessionRecord {
                            session_id,
                            variant,
                            created_at,
                            status: SessionStatus::Active,
                            profile_ref,
                            transcript_ref,
                        },
                    );
                }
                IndexEvent::Closed { session_id, .. } => {
                    if let Some(r) = known.get_mut(&session_id) {
                        r.status = SessionStatus::Closed;
                    }
                }
            }
        }

        let mut sessions = Vec::new();
        for path in store.transcript_files()? {
            let (writer, transcript) = TranscriptWriter::resume(&path)?;
            let id = transcript.session_id().to_string();
            if path.file_stem().and_then(|s| s.to_str()) != Some(id.as_str()) {
                return Err(storage(format!("{} holds session `{id}`", path.display())));
            }
            let record = match known.remove(&id) {
                Some(r) => r,
                None => {
                    let header = transcript.header();
                    let event = IndexEvent::Created {
                        session_id: id.clone(),
                        variant: header.variant.unwrap_or(Variant::Full),
                        created_at: header.created_at,
                        profile_ref: header.profile_ref.clone(),
                    };
                    store.record(&event)?;
                    SessionRecord {
                        session_id: id.clone(),
                        variant: header.variant.unwrap_or(Variant::Full),
                        created_at: header.created_at,
                        status: SessionStatus::Active,
                        profile_ref: header.profile_ref.clone(),
                        transcript_ref: store.file_name(&id),
                    }
                }
            };
            sessions.push(StoredSession {
                record,
                transcript,
                writer,
            });
        }
        for (_, record) in known {
            let (transcript, writer) = store.create_transcript(&record)?;
            sessions.push(StoredSession {
                record,
                transcript,
                writer,
            });
        }
        sessions.sort_by(|a, b| a.record.session_id.cmp(&b.record.session_id));
        Ok((store, sessions))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn file_name(&self, session_id: &str) -> String {
        format!("{session_id}.jsonl")
    }

    pub fn transcript_path(&self, session_id: &str) -> PathBuf {
        self.dir.join(self.file_name(session_id))
    }

    fn transcript_files(&self) -> Result<Vec<PathBuf>, ServiceError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
            .filter(|p| p.file_name().is_some_and(|n| n != INDEX_FILE))
            .collect();
        paths.sort();
        Ok(paths)
    }

    /// Appends one event to the index and syncs it.
    pub fn record(&self, event: &IndexEvent) -> Result<(), ServiceError> {
        let mut line = serde_json::to_string(event).map_err(storage)?;
        line.push('\n');
        let mut f = self.index.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    /// Writes the transcript header for a new session.
    pub fn create_transcript(
        &self,
        record: &SessionRecord,
    ) -> Result<(Transcript, TranscriptWriter), ServiceError> {
        let header = TranscriptHeader {
            session_id: record.session_id.clone(),
            profile_ref: record.profile_ref.clone(),
            created_at: record.created_at,
            variant: Some(record.variant),
        };
        let writer = TranscriptWriter::create(self.transcript_path(&record.session_id), &header)?;
        Ok((Transcript::with_header(header), writer))
    }

    /// Creates a session: transcript file first, then the index entry.
    pub fn create_session(
        &self,
        session_id: String,
        variant: Variant,
        profile_ref: Option<String>,
    ) -> Result<StoredSession, ServiceError> {
        let record = SessionRecord {
            transcript_ref: self.file_name(&session_id),
            session_id,
            variant,
            created_at: Utc::now(),
            status: SessionStatus::Active,
            profile_ref,
        };
        let (transcript, writer) = self.create_transcript(&record)?;
        self.record(&IndexEvent::Created {
            session_id: record.session_id.clone(),
            variant,
            created_at: record.created_at,
            profile_ref: record.profile_ref.clone(),
        })?;
        Ok(StoredSession {
            record,
            transcript,
            writer,
        })
    }
}
