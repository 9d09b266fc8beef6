//! Therapeutic state planning: stage first, then a reflection level within it.
//!
//! Each step renders its prompt, calls the backend and parses the fenced
//! answer. Unparseable answers go down a fallback ladder so a live session
//! never stalls:
//!
//! * turn 1 is always Trust Building, level 1, without a model call;
//! * a bad stage label is retried once, then the previous turn's stage is kept;
//! * a bad level label is retried once, then the previous level is kept if it
//!   belongs to the planned stage, else level 1 of that stage.

use std::sync::Arc;

use thiserror::Error;

use crate::backend::{
    parse_fenced_yaml, BackendError, CallKind, ChatBackend, ChatMessage, FencedYamlError,
};
use crate::prompts::{reflection_template, PromptError, PromptSet};
use crate::taxonomy::{normalize_label, validate_state, ReflectionLevel, Stage, TherapeuticState};
use crate::transcript::{render_dialogue, Transcript};

pub const DEFAULT_HISTORY_WINDOW: usize = 10;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("client utterance is empty")]
    EmptyUtterance,
    #[error("unparseable stage `{raw}`: {reason}")]
    UnparseableStage { raw: String, reason: String },
    #[error("unparseable level `{raw}` for stage {stage}: {reason}")]
    UnparseableLevel {
        stage: Stage,
        raw: String,
        reason: String,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// How a ladder step reached its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Resolution {
    /// Fixed without a model call.
    Forced,
    /// Parsed from model output on the given attempt (1 or 2).
    Parsed { attempt: u8 },
    /// Both attempts failed; the fallback value was used.
    FellBack,
}

/// Decides what stage a session moves to given the previous one.
pub trait TransitionPolicy: Send + Sync {
    fn admit(&self, previous: Option<Stage>, proposed: Stage) -> Stage;
}

/// Any stage may follow any other.
#[derive(Debug, Clone, Copy, Default)]
pub struct FreeTransitions;

impl TransitionPolicy for FreeTransitions {
    fn admit(&self, _previous: Option<Stage>, proposed: Stage) -> Stage {
        proposed
    }
}

impl<F> TransitionPolicy for F
where
    F: Fn(Option<Stage>, Stage) -> Stage + Send + Sync,
{
    fn admit(&self, previous: Option<Stage>, proposed: Stage) -> Stage {
        self(previous, proposed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub stage: Stage,
    pub draft: String,
    pub raw_label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelPlan {
    pub level: ReflectionLevel,
    pub draft: String,
    pub raw_label: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PlannerDecision {
    pub state: TherapeuticState,
    /// Reply drafted by the planning prompts; rewritten by response generation.
    pub planner_draft_response: String,
    pub raw_stage_label: String,
    pub raw_level_label: String,
    pub stage_resolution: Resolution,
    pub level_resolution: Resolution,
}

// (stage, normalized alias, level index)
const LEVEL_ALIASES: &[(Stage, &str, u8)] = &[
    (Stage::TrustBuilding, "exploringtheproblemevent", 1),
    (Stage::TrustBuilding, "problemeventexploration", 1),
    (Stage::TrustBuilding, "empathiccomforting", 2),
    (Stage::TrustBuilding, "empathicsupport", 2),
    (
        Stage::ProblemExternalization,
        "negotiatingthedominantproblem",
        1,
    ),
    (
        Stage::ProblemExternalization,
        "mappingtheproblemseffects",
        2,
    ),
    (
        Stage::ProblemExternalization,
        "evaluatingtheproblemseffects",
        3,
    ),
    (Stage::ProblemExternalization, "justifyingtheevaluations", 4),
    (Stage::ReAuthoring, "elaboratinguniqueoutcomes", 1),
    (Stage::ReAuthoring, "exploringidentitylandscape", 2),
    (Stage::ReAuthoring, "exploringactionlandscape", 3),
];

/// Resolves a model-written level label within `stage`.
///
/// Accepts canonical names, known prompt-example spellings and index forms
/// such as "L2" or "level 2". Labels of other stages are rejected.
pub fn resolve_level(stage: Stage, raw: &str) -> Option<ReflectionLevel> {
    if let Ok(state) = validate_state(stage, raw) {
        return Some(state.level());
    }
    let key = normalize_label(raw);
    if let Some(&(_, _, index)) = LEVEL_ALIASES
        .iter()
        .find(|(s, alias, _)| *s == stage && *alias == key)
    {
        return ReflectionLevel::get(stage, index).ok();
    }
    let digits = key
        .strip_prefix("level")
        .or_else(|| key.strip_prefix('l'))
        .unwrap_or(&key);
    digits
        .parse::<u8>()
        .ok()
        .and_then(|i| ReflectionLevel::get(stage, i).ok())
}

fn unparseable_stage(raw: &str, reason: impl ToString) -> PlannerError {
    PlannerError::UnparseableStage {
        raw: raw.to_string(),
        reason: reason.to_string(),
    }
}

fn unparseable_level(stage: Stage, raw: &str, reason: impl ToString) -> PlannerError {
    PlannerError::UnparseableLevel {
        stage,
        raw: raw.to_string(),
        reason: reason.to_string(),
    }
}

fn is_unparseable(e: &PlannerError) -> bool {
    matches!(
        e,
        PlannerError::UnparseableStage { .. } | PlannerError::UnparseableLevel { .. }
    )
}

#[derive(Clone)]
pub struct Planner {
    backend: Arc<dyn ChatBackend>,
    prompts: Arc<PromptSet>,
    window: usize,
    policy: Arc<dyn TransitionPolicy>,
}

impl Planner {
    pub fn new(backend: Arc<dyn ChatBackend>, prompts: Arc<PromptSet>) -> Self {
        Self {
            backend,
            prompts,
            window: DEFAULT_HISTORY_WINDOW,
            policy: Arc::new(FreeTransitions),
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn with_policy(mut self, policy: Arc<dyn TransitionPolicy>) -> Self {
        self.policy = policy;
        self
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn memory(&self, history: &Transcript) -> String {
        let text = render_dialogue(history.window(self.window));
        if text.is_empty() {
            "(no earlier conversation)".to_string()
        } else {
            text
        }
    }

    fn ask(&self, system: String, utterance: &str, kind: CallKind) -> Result<String, PlannerError> {
        let messages = [ChatMessage::system(system), ChatMessage::user(utterance)];
        Ok(self.backend.complete(&messages, kind)?)
    }

    /// One stage-planning attempt. With empty history the stage is Trust
    /// Building and no call is made.
    pub fn plan_stage(
        &self,
        history: &Transcript,
        utterance: &str,
    ) -> Result<StagePlan, PlannerError> {
        if utterance.trim().is_empty() {
            return Err(PlannerError::EmptyUtterance);
        }
        if history.is_empty() {
            return Ok(StagePlan {
                stage: Stage::TrustBuilding,
                draft: String::new(),
                raw_label: String::new(),
            });
        }
        let previous = history.last_state().map_or("None", |s| s.stage().label());
        let system = self.prompts.render(
            "stage",
            &[
                ("previous_stage", previous),
                ("memory", &self.memory(history)),
            ],
        )?;
        let raw = self.ask(system, utterance, CallKind::StagePlanning)?;
        let fields = parse_fenced_yaml(&raw, &["Stage", "Response"])
            .map_err(|e| unparseable_stage(&raw, e))?;
        let label = fields
            .require("Stage")
            .map_err(|e: FencedYamlError| unparseable_stage(&raw, e))?;
        let stage = Stage::parse_label(label).map_err(|e| unparseable_stage(label, e))?;
        Ok(StagePlan {
            stage,
            draft: fields.get("Response").unwrap_or_default().to_string(),
            raw_label: label.to_string(),
        })
    }

    /// One level-planning attempt within an already planned stage.
    pub fn plan_reflection(
        &self,
        stage: Stage,
        history: &Transcript,
        utterance: &str,
    ) -> Result<LevelPlan, PlannerError> {
        if utterance.trim().is_empty() {
            return Err(PlannerError::EmptyUtterance);
        }
        let system = self.prompts.render(
            &reflection_template(stage),
            &[("memory", &self.memory(history))],
        )?;
        let raw = self.ask(system, utterance, CallKind::ReflectionPlanning)?;
        let fields = parse_fenced_yaml(&raw, &["Reflection_level", "Response"])
            .map_err(|e| unparseable_level(stage, &raw, e))?;
        let label = fields
            .require("Reflection_level")
            .map_err(|e| unparseable_level(stage, &raw, e))?;
        let level = resolve_level(stage, label)
            .ok_or_else(|| unparseable_level(stage, label, "not a level of this stage"))?;
        Ok(LevelPlan {
            level,
            draft: fields.get("Response").unwrap_or_default().to_string(),
            raw_label: label.to_string(),
        })
    }

    /// Full plan: stage then level, with fallbacks.
    pub fn plan(
        &self,
        history: &Transcript,
        utterance: &str,
    ) -> Result<PlannerDecision, PlannerError> {
        self.plan_with(history, utterance, true)
    }

    /// Plans the stage only and fixes the level to 1 of that stage.
    pub fn plan_stage_only(
        &self,
        history: &Transcript,
        utterance: &str,
    ) -> Result<PlannerDecision, PlannerError> {
        self.plan_with(history, utterance, false)
    }

    fn plan_with(
        &self,
        history: &Transcript,
        utterance: &str,
        plan_level: bool,
    ) -> Result<PlannerDecision, PlannerError> {
        if utterance.trim().is_empty() {
            return Err(PlannerError::EmptyUtterance);
        }
        let previous = history.last_state();
        if history.is_empty() {
            return Ok(PlannerDecision {
                state: TherapeuticState::initial(Stage::TrustBuilding),
                planner_draft_response: String::new(),
                raw_stage_label: String::new(),
                raw_level_label: String::new(),
                stage_resolution: Resolution::Forced,
                level_resolution: Resolution::Forced,
            });
        }

        let (stage_plan, stage_resolution) = match ladder(|| self.plan_stage(history, utterance))? {
            (Some(plan), attempt) => (plan, Resolution::Parsed { attempt }),
            (None, _) => {
                let stage = previous.map_or(Stage::TrustBuilding, |s| s.stage());
                tracing::warn!("stage unparseable twice; keeping {stage}");
                (
                    StagePlan {
                        stage,
                        draft: String::new(),
                        raw_label: String::new(),
                    },
                    Resolution::FellBack,
                )
            }
        };
        let stage = self
            .policy
            .admit(previous.map(|s| s.stage()), stage_plan.stage);

        if !plan_level {
            return Ok(PlannerDecision {
                state: TherapeuticState::initial(stage),
                planner_draft_response: stage_plan.draft,
                raw_stage_label: stage_plan.raw_label,
                raw_level_label: String::new(),
                stage_resolution,
                level_resolution: Resolution::Forced,
            });
        }

        let (level_plan, level_resolution) =
            match ladder(|| self.plan_reflection(stage, history, utterance))? {
                (Some(plan), attempt) => (plan, Resolution::Parsed { attempt }),
                (None, _) => {
                    let level = previous
                        .filter(|s| s.stage() == stage)
                        .map_or_else(|| ReflectionLevel::first(stage), |s| s.level());
                    tracing::warn!("level unparseable twice; using {level}");
                    (
                        LevelPlan {
                            level,
                            draft: String::new(),
                            raw_label: String::new(),
                        },
                        Resolution::FellBack,
                    )
                }
            };
        let draft = if level_plan.draft.trim().is_empty() {
            stage_plan.draft
        } else {
            level_plan.draft
        };
        Ok(PlannerDecision {
            state: TherapeuticState::from_level(level_plan.level),
            planner_draft_response: draft,
            raw_stage_label: stage_plan.raw_label,
            raw_level_label: level_plan.raw_label,
            stage_resolution,
            level_resolution,
        })
    }
}

/// Up to two attempts. `Ok((None, 2))` means both were unparseable; other
/// errors end the ladder at once.
fn ladder<T>(
    mut attempt: impl FnMut() -> Result<T, PlannerError>,
) -> Result<(Option<T>, u8), PlannerError> {
    for n in 1..=2u8 {
        match attempt() {
            Ok(v) => return Ok((Some(v), n)),
            Err(e) if is_unparseable(&e) => tracing::debug!(attempt = n, "{e}"),
            Err(e) => return Err(e),
        }
    }
    Ok((None, 2))
}
