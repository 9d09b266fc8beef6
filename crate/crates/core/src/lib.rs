//! Narrative therapist simulation and evaluation.
//!
//! The therapist pipeline plans a therapeutic state (stage, then reflection
//! level), retrieves expert exemplars for that state and generates a reply.
//! The evaluation side codes Innovative Moments in client speech, computes
//! salience, trajectories and inter-rater agreement, and scores transcripts on
//! therapeutic dimensions.
//!
//! All model access goes through [`backend::ChatBackend`]; the deterministic
//! mocks in [`backend`] make every pipeline runnable offline.

pub mod backend;
pub mod clientsim;
pub mod config;
pub mod exemplars;
pub mod ima;
pub mod orchestrator;
pub mod par;
pub mod planner;
pub mod prompts;
pub mod supervisor;
pub mod taxonomy;
pub mod transcript;

pub use orchestrator::{run_session, state_distribution, Engine, EngineConfig, TurnResult};
pub use taxonomy::{levels_for_stage, validate_state, ReflectionLevel, Stage, TherapeuticState};
pub use transcript::{Transcript, Turn, Variant};
