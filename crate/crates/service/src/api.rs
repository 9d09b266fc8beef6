//! JSON request and response bodies.
//!
//! | endpoint                          | request             | response        |
//! |-----------------------------------|---------------------|-----------------|
//! | `POST /sessions`                  | [`CreateSession`]   | [`SessionSummary`] |
//! | `GET /sessions`                   |                     | [`SessionList`] |
//! | `GET /sessions/{id}`              |                     | [`SessionDetail`] |
//! | `POST /sessions/{id}/messages`    | [`PostMessage`]     | [`MessageReply`] |
//! | `GET /sessions/{id}/metrics`      | [`MetricsQuery`]    | [`MetricsView`] |
//! | `POST /sessions/{id}/close`       |                     | [`SessionSummary`] |
//! | `GET /healthz`                    |                     | [`Health`]      |
//!
//! Errors carry [`crate::ErrorBody`].

use narrative_core::ima::{SalienceReport, Trajectory};
use narrative_core::orchestrator::WordStats;
use narrative_core::supervisor::DimensionScore;
use narrative_core::{TherapeuticState, Turn};
use serde::{Deserialize, Serialize};

use crate::store::SessionRecord;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    /// Defaults to the service's configured variant.
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default)]
    pub profile_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostMessage {
    pub client_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub stage: String,
    pub level: String,
    pub level_index: u8,
    pub badge: String,
}

impl From<TherapeuticState> for StateView {
    fn from(s: TherapeuticState) -> Self {
        StateView {
            stage: s.stage().label().to_string(),
            level: s.level().name.to_string(),
            level_index: s.level().index,
            badge: s.badge(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnView {
    pub turn: u32,
    pub client_text: String,
    pub therapist_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateView>,
    #[serde(default)]
    pub exemplar_ids: Vec<String>,
}

impl From<&Turn> for TurnView {
    fn from(t: &Turn) -> Self {
        TurnView {
            turn: t.index,
            client_text: t.client_text.clone(),
            therapist_text: t.therapist_text.clone(),
            state: t.state.map(StateView::from),
            exemplar_ids: t.exemplar_ids.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    #[serde(flatten)]
    pub record: SessionRecord,
    pub turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionList {
    pub sessions: Vec<SessionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDetail {
    pub session: SessionSummary,
    pub turns: Vec<TurnView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageReply {
    pub session_id: String,
    #[serde(flatten)]
    pub turn: TurnView,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsQuery {
    /// Start IM annotation of the current transcript if not already done.
    #[serde(default)]
    pub annotate: bool,
    /// Start supervisor scoring of the current transcript if not already done.
    #[serde(default)]
    pub evaluate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateShare {
    pub stage: String,
    pub level: String,
    pub badge: String,
    pub fraction: f64,
}

/// Progress of a background metric for the transcript version it was run on.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Job<T> {
    /// Not requested for the current version.
    #[default]
    Idle,
    Running {
        version: usize,
    },
    Done {
        version: usize,
        result: T,
    },
    Failed {
        version: usize,
        error: String,
    },
}

impl<T> Job<T> {
    pub fn version(&self) -> Option<usize> {
        match self {
            Job::Idle => None,
            Job::Running { version } | Job::Done { version, .. } | Job::Failed { version, .. } => {
                Some(*version)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationMetrics {
    pub salience: SalienceReport,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMetrics {
    pub scores: Vec<DimensionScore>,
    /// Mean of the core dimensions, rounded to 2 decimals.
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub session_id: String,
    /// Number of committed turns the metrics describe.
    pub version: usize,
    /// Empty when no turn carries a state.
    pub state_distribution: Vec<StateShare>,
    pub word_stats: WordStats,
    pub annotation: Job<AnnotationMetrics>,
    pub evaluation: Job<EvaluationMetrics>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub sessions: usize,
}
