//! The therapist turn pipeline and the dual-agent session loop.
//!
//! A turn is plan, retrieve, then generate. Which steps run depends on the
//! session [`Variant`]. The planner's draft reply is handed to response
//! generation to be rewritten and is used as the reply if generation fails.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CallKind, ChatBackend, ChatMessage};
use crate::clientsim::{ClientAgent, ClientError};
use crate::exemplars::{retrieve, Repository, RepositoryError, RetrievalResult, DEFAULT_K};
use crate::ima::word_count;
use crate::planner::{
    Planner, PlannerDecision, PlannerError, TransitionPolicy, DEFAULT_HISTORY_WINDOW,
};
use crate::prompts::{response_template, PromptError, PromptSet};
use crate::taxonomy::{levels_for_stage, TherapeuticState};
use crate::transcript::{
    render_dialogue, Transcript, TranscriptError, TranscriptWriter, Turn, Variant,
};

pub const DEFAULT_MIN_TURNS: usize = 35;
pub const DEFAULT_HUMAN_MIN_TURNS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub k: usize,
    pub window: usize,
    /// Used for sessions whose header names no variant.
    pub variant: Variant,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            window: DEFAULT_HISTORY_WINDOW,
            variant: Variant::Full,
        }
    }
}

#[derive(Debug, Error)]
pub enum TurnError {
    #[error("client utterance is empty")]
    EmptyUtterance,
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Retrieval(#[from] RepositoryError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("response generation failed and the planner left no draft: {0}")]
    NoReply(String),
}

/// A turn that could not produce a reply, with whatever ran before the failure.
#[derive(Debug, Error)]
#[error("turn {turn} failed: {source}")]
pub struct TurnFailed {
    pub turn: u32,
    pub decision: Option<Box<PlannerDecision>>,
    pub retrieval: Option<Box<RetrievalResult>>,
    #[source]
    pub source: TurnError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnResult {
    pub therapist_text: String,
    /// Absent for the role-play baseline.
    pub decision: Option<PlannerDecision>,
    /// Absent when the variant skips retrieval.
    pub retrieval: Option<RetrievalResult>,
}

impl TurnResult {
    pub fn state(&self) -> Option<TherapeuticState> {
        self.decision.as_ref().map(|d| d.state)
    }

    pub fn exemplar_ids(&self) -> Vec<String> {
        self.retrieval
            .as_ref()
            .map(RetrievalResult::ids)
            .unwrap_or_default()
    }

    /// The committed turn this result becomes at `index`.
    pub fn into_turn(&self, index: u32, client_text: &str) -> Turn {
        Turn {
            index,
            client_text: client_text.to_string(),
            therapist_text: self.therapist_text.clone(),
            state: self.state(),
            exemplar_ids: self.exemplar_ids(),
        }
    }
}

/// Screens client utterances before the pipeline runs.
pub trait SafetyFilter: Send + Sync {
    /// `Some(reply)` answers the turn directly with `reply`, skipping planning.
    fn intercept(&self, utterance: &str) -> Option<String>;
}

#[derive(Clone)]
pub struct Engine {
    backend: Arc<dyn ChatBackend>,
    prompts: Arc<PromptSet>,
    repository: Arc<Repository>,
    planner: Planner,
    config: EngineConfig,
    safety: Option<Arc<dyn SafetyFilter>>,
}

impl Engine {
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        prompts: Arc<PromptSet>,
        repository: Arc<Repository>,
        config: EngineConfig,
    ) -> Self {
        let planner = Planner::new(backend.clone(), prompts.clone()).with_window(config.window);
        Self {
            backend,
            prompts,
            repository,
            planner,
            config,
            safety: None,
        }
    }

    pub fn with_transition_policy(mut self, policy: Arc<dyn TransitionPolicy>) -> Self {
        self.planner = self.planner.with_policy(policy);
        self
    }

    pub fn with_safety_filter(mut self, filter: Arc<dyn SafetyFilter>) -> Self {
        self.safety = Some(filter);
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn backend(&self) -> &Arc<dyn ChatBackend> {
        &self.backend
    }

    pub fn prompts(&self) -> &Arc<PromptSet> {
        &self.prompts
    }

    pub fn repository(&self) -> &Arc<Repository> {
        &self.repository
    }

    pub fn variant_of(&self, session: &Transcript) -> Variant {
        session.variant().unwrap_or(self.config.variant)
    }

    fn memory(&self, session: &Transcript) -> String {
        let text = render_dialogue(session.window(self.config.window));
        if text.is_empty() {
            "(no earlier conversation)".to_string()
        } else {
            text
        }
    }

    /// Produces the therapist reply for the next turn of `session`. The caller
    /// appends the turn.
    pub fn respond(
        &self,
        session: &Transcript,
        client_utterance: &str,
    ) -> Result<TurnResult, TurnFailed> {
        let turn = session.next_index();
        let fail = |decision: Option<PlannerDecision>,
                    retrieval: Option<RetrievalResult>,
                    source| TurnFailed {
            turn,
            decision: decision.map(Box::new),
            retrieval: retrieval.map(Box::new),
            source,
        };
        if client_utterance.trim().is_empty() {
            return Err(fail(None, None, TurnError::EmptyUtterance));
        }
        if let Some(reply) = self
            .safety
            .as_ref()
            .and_then(|f| f.intercept(client_utterance))
        {
            return Ok(TurnResult {
                therapist_text: reply,
                decision: None,
                retrieval: None,
            });
        }
        let variant = self.variant_of(session);
        if variant == Variant::RolePlay {
            return self
                .role_play_respond(session, client_utterance)
                .map(|therapist_text| TurnResult {
                    therapist_text,
                    decision: None,
                    retrieval: None,
                })
                .map_err(|e| fail(None, None, e));
        }

        let planned = if variant.plans_level() {
            self.planner.plan(session, client_utterance)
        } else {
            self.planner.plan_stage_only(session, client_utterance)
        };
        let decision = planned.map_err(|e| fail(None, None, e.into()))?;

        let retrieval = if variant.retrieves() {
            let r = retrieve(
                &self.repository,
                &*self.backend,
                client_utterance,
                &decision.state,
                self.config.k,
            )
            .map_err(|e| fail(Some(decision.clone()), None, e.into()))?;
            Some(r)
        } else {
            None
        };

        match self.generate(session, client_utterance, &decision, retrieval.as_ref()) {
            Ok(therapist_text) => Ok(TurnResult {
                therapist_text,
                decision: Some(decision),
                retrieval,
            }),
            Err(e) if !decision.planner_draft_response.trim().is_empty() => {
                tracing::warn!(turn, "response generation failed, using planner draft: {e}");
                Ok(TurnResult {
                    therapist_text: decision.planner_draft_response.clone(),
                    decision: Some(decision),
                    retrieval,
                })
            }
            Err(e) => Err(fail(
                Some(decision),
                retrieval,
                TurnError::NoReply(e.to_string()),
            )),
        }
    }

    fn generate(
        &self,
        session: &Transcript,
        utterance: &str,
        decision: &PlannerDecision,
        retrieval: Option<&RetrievalResult>,
    ) -> Result<String, TurnError> {
        let level = decision.state.level();
        let level_line = format!(
            "{} (level {} of {})",
            level.name,
            level.index,
            levels_for_stage(level.stage).len()
        );
        let examples = match retrieval {
            Some(r) if !r.exemplars.is_empty() => r
                .exemplars
                .iter()
                .enumerate()
                .map(|(i, s)| format!("{}. {}", i + 1, s.exemplar.response_text))
                .collect::<Vec<_>>()
                .join("\n"),
            _ => "(none)".to_string(),
        };
        let system = self.prompts.render(
            &response_template(decision.state.stage()),
            &[
                ("level", &level_line),
                ("examples", &examples),
                ("initial_response", &decision.planner_draft_response),
                ("memory", &self.memory(session)),
            ],
        )?;
        let messages = [ChatMessage::system(system), ChatMessage::user(utterance)];
        let text = self
            .backend
            .complete(&messages, CallKind::ResponseGeneration)?;
        let text = text.trim();
        if text.is_empty() {
            return Err(TurnError::Backend(BackendError::InvalidRequest(
                "empty response".into(),
            )));
        }
        Ok(text.to_string())
    }

    /// The single-prompt baseline: no planning, no retrieval.
    pub fn role_play_respond(
        &self,
        session: &Transcript,
        client_utterance: &str,
    ) -> Result<String, TurnError> {
        if client_utterance.trim().is_empty() {
            return Err(TurnError::EmptyUtterance);
        }
        let mut messages = vec![ChatMessage::system(self.prompts.get("role_play")?)];
        for t in session.window(self.config.window) {
            messages.push(ChatMessage::user(t.client_text.clone()));
            messages.push(ChatMessage::assistant(t.therapist_text.clone()));
        }
        messages.push(ChatMessage::user(client_utterance));
        let text = self
            .backend
            .complete(&messages, CallKind::TherapistRolePlay)?;
        let text = text.trim();
        if text.is_empty() {
            return Err(TurnError::Backend(BackendError::InvalidRequest(
                "empty response".into(),
            )));
        }
        Ok(text.to_string())
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("min_turns must be at least 1")]
    InvalidMinTurns,
    #[error("client agent failed at turn {turn}: {source}")]
    Client {
        turn: u32,
        #[source]
        source: ClientError,
    },
    #[error(transparent)]
    Turn(#[from] TurnFailed),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

/// A session that stopped early; `partial` holds every committed turn.
#[derive(Debug, Error)]
#[error("session {} aborted after {} turns: {source}", partial.session_id(), partial.len())]
pub struct SessionAborted {
    pub partial: Box<Transcript>,
    #[source]
    pub source: SessionError,
}

/// Alternates client and therapist until `min_turns` pairs exist.
///
/// `session` may already hold turns (a resumed session). Every committed turn
/// is appended to `writer` before the next one starts.
pub fn run_session(
    engine: &Engine,
    client: &dyn ClientAgent,
    mut session: Transcript,
    min_turns: usize,
    opening: &str,
    mut writer: Option<&mut TranscriptWriter>,
) -> Result<Transcript, SessionAborted> {
    if min_turns == 0 {
        return Err(SessionAborted {
            partial: Box::new(session),
            source: SessionError::InvalidMinTurns,
        });
    }
    while session.len() < min_turns {
        let turn = session.next_index();
        let last_therapist = session
            .turns()
            .last()
            .map_or_else(|| opening.to_string(), |t| t.therapist_text.clone());
        let client_text = match client.reply(&session, &last_therapist) {
            Ok(t) => t,
            Err(source) => {
                return Err(SessionAborted {
                    partial: Box::new(session),
                    source: SessionError::Client { turn, source },
                })
            }
        };
        let result = match engine.respond(&session, &client_text) {
            Ok(r) => r,
            Err(e) => {
                return Err(SessionAborted {
                    partial: Box::new(session),
                    source: e.into(),
                })
            }
        };
        let committed = match session.push_turn(result.into_turn(turn, &client_text)) {
            Ok(t) => t.clone(),
            Err(e) => {
                return Err(SessionAborted {
                    partial: Box::new(session),
                    source: e.into(),
                })
            }
        };
        if let Some(w) = writer.as_deref_mut() {
            if let Err(e) = w.append(&committed) {
                return Err(SessionAborted {
                    partial: Box::new(session),
                    source: e.into(),
                });
            }
        }
    }
    Ok(session)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("transcript has no turns with a planned state")]
pub struct NoStatedTurns;

/// Fraction of stated turns spent in each state.
pub fn state_distribution(
    transcript: &Transcript,
) -> Result<BTreeMap<TherapeuticState, f64>, NoStatedTurns> {
    let mut counts: BTreeMap<TherapeuticState, usize> = BTreeMap::new();
    for s in transcript.turns().iter().filter_map(|t| t.state) {
        *counts.entry(s).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(NoStatedTurns);
    }
    Ok(counts
        .into_iter()
        .map(|(s, n)| (s, n as f64 / total as f64))
        .collect())
}

/// Mean words per utterance on each side of a transcript.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordStats {
    pub turns: usize,
    pub client_mean: f64,
    pub therapist_mean: f64,
}

pub fn word_stats(transcript: &Transcript) -> WordStats {
    let n = transcript.len();
    let (c, t) = transcript
        .turns()
        .iter()
        .fold((0usize, 0usize), |(c, t), turn| {
            (
                c + word_count(&turn.client_text),
                t + word_count(&turn.therapist_text),
            )
        });
    let mean = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    WordStats {
        turns: n,
        client_mean: mean(c),
        therapist_mean: mean(t),
    }
}
