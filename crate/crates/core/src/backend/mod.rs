//! Chat-completion and embedding providers.
//!
//! Every model call goes through [`ChatBackend`] tagged with a [`CallKind`];
//! the kind selects the generation parameters. Two deterministic mocks
//! ([`ScriptedBackend`], [`RuleBackend`]) make the pipelines testable without
//! a provider, and [`HttpBackend`] talks to an OpenAI-compatible endpoint.

mod fenced;
mod http;
mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fenced::{parse_fenced_yaml, render_fenced_yaml, FencedFields, FencedYamlError};
pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{hash_embedding, RecordedCall, RuleBackend, ScriptedBackend, DEFAULT_EMBEDDING_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend refused request (status {status}): {message}")]
    BackendRefused { status: u16, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// Retryable transport failure; surfaced as `BackendUnavailable` once the
    /// retry budget is spent.
    #[error("transient failure: {0}")]
    Transient(String),
}

/// Which pipeline step a model call serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    TherapistRolePlay,
    ClientSimulation,
    StagePlanning,
    ReflectionPlanning,
    ResponseGeneration,
    ImAnnotation,
    DimensionEvaluation,
}

impl CallKind {
    pub const ALL: [CallKind; 7] = [
        CallKind::TherapistRolePlay,
        CallKind::ClientSimulation,
        CallKind::StagePlanning,
        CallKind::ReflectionPlanning,
        CallKind::ResponseGeneration,
        CallKind::ImAnnotation,
        CallKind::DimensionEvaluation,
    ];
}

impl fmt::Display for CallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CallKind::TherapistRolePlay => "therapist_role_play",
            CallKind::ClientSimulation => "client_simulation",
            CallKind::StagePlanning => "stage_planning",
            CallKind::ReflectionPlanning => "reflection_planning",
            CallKind::ResponseGeneration => "response_generation",
            CallKind::ImAnnotation => "im_annotation",
            CallKind::DimensionEvaluation => "dimension_evaluation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    /// Carried for completeness; OpenAI-style chat endpoints have no beam search.
    pub beam_size: u32,
    pub max_tokens: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid generation parameters: {0}")]
pub struct InvalidParams(String);

impl GenerationParams {
    const fn row(
        temperature: f64,
        top_p: f64,
        frequency_penalty: f64,
        presence_penalty: f64,
        max_tokens: u32,
    ) -> Self {
        Self {
            temperature,
            top_p,
            frequency_penalty,
            presence_penalty,
            beam_size: 1,
            max_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), InvalidParams> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(InvalidParams(format!(
                "temperature {} < 0",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(InvalidParams(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(InvalidParams("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Built-in parameters per call kind.
pub fn params_for(kind: CallKind) -> GenerationParams {
    use CallKind::*;
    match kind {
        TherapistRolePlay => GenerationParams::row(1.0, 0.95, 0.0, 0.0, 300),
        ClientSimulation => GenerationParams::row(0.7, 0.5, 0.0, 2.0, 300),
        StagePlanning => GenerationParams::row(0.5, 1.0, 0.0, 2.0, 200),
        ReflectionPlanning => GenerationParams::row(0.5, 1.0, 0.0, 2.0, 200),
        ResponseGeneration => GenerationParams::row(0.8, 0.9, 0.0, 1.5, 300),
        ImAnnotation => GenerationParams::row(0.1, 1.0, 0.2, 0.0, 512),
        DimensionEvaluation => GenerationParams::row(0.1, 1.0, 0.2, 0.0, 512),
    }
}

/// Parameter table with optional per-kind overrides from configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamTable {
    #[serde(default)]
    overrides: BTreeMap<CallKind, GenerationParams>,
}

impl ParamTable {
    pub fn with_override(
        mut self,
        kind: CallKind,
        params: GenerationParams,
    ) -> Result<Self, InvalidParams> {
        params.validate()?;
        self.overrides.insert(kind, params);
        Ok(self)
    }

    pub fn get(&self, kind: CallKind) -> GenerationParams {
        self.overrides
            .get(&kind)
            .copied()
            .unwrap_or_else(|| params_for(kind))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Checks the request shape shared by all backends.
pub fn check_messages(messages: &[ChatMessage]) -> Result<(), BackendError> {
    match messages.first() {
        None => return Err(BackendError::InvalidRequest("no messages".into())),
        Some(m) if m.role != Role::System => {
            return Err(BackendError::InvalidRequest(
                "first message must be a system message".into(),
            ))
        }
        _ => {}
    }
    if let Some(i) = messages.iter().position(|m| m.content.trim().is_empty()) {
        return Err(BackendError::InvalidRequest(format!(
            "message {i} is empty"
        )));
    }
    Ok(())
}

/// Dense embedding with a fixed dimension and finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding has no components")]
    Empty,
    #[error("embedding component {0} is not finite")]
    NonFinite(usize),
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

/// A model provider. Implementations must tolerate concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], kind: CallKind) -> Result<String, BackendError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete(&self, messages: &[ChatMessage], kind: CallKind) -> Result<String, BackendError> {
        (**self).complete(messages, kind)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        (**self).embed(text)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, messages: &[ChatMessage], kind: CallKind) -> Result<String, BackendError> {
        (**self).complete(messages, kind)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        (**self).embed(text)
    }
}

/// Exponential backoff for transient failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, retry: u32) -> Duration {
        self.base_delay
            .saturating_mul(1u32.checked_shl(retry).unwrap_or(u32::MAX))
            .min(self.max_delay)
    }

    /// Runs `attempt` until it succeeds, fails permanently, or the budget runs out.
    pub fn run<T>(
        &self,
        mut attempt: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut retry = 0;
        loop {
            match attempt() {
                Err(BackendError::Transient(msg)) => {
                    if retry >= self.max_retries {
                        return Err(BackendError::BackendUnavailable(format!(
                            "{msg} (gave up after {} attempts)",
                            retry + 1
                        )));
                    }
                    tracing::debug!(retry, "transient backend failure: {msg}");
                    thread::sleep(self.delay_for(retry));
                    retry += 1;
                }
                other => return other,
            }
        }
    }
}

/// Caps the number of in-flight calls; excess callers block until a slot frees.
pub struct CappedBackend<B> {
    inner: B,
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<B: ChatBackend> CappedBackend<B> {
    pub fn new(inner: B, cap: usize) -> Self {
        Self {
            inner,
            cap: cap.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn with_slot<T>(&self, f: impl FnOnce(&B) -> T) -> T {
        {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.cap {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
        }
        struct Release<'a>(&'a Mutex<usize>, &'a Condvar);
        impl Drop for Release<'_> {
            fn drop(&mut self) {
                *self.0.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
                self.1.notify_one();
            }
        }
        let _release = Release(&self.in_flight, &self.freed);
        f(&self.inner)
    }
}

impl<B: ChatBackend> ChatBackend for CappedBackend<B> {
    fn complete(&self, messages: &[ChatMessage], kind: CallKind) -> Result<String, BackendError> {
        self.with_slot(|b| b.complete(messages, kind))
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        self.with_slot(|b| b.embed(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn table_rows() {
        let p = params_for(CallKind::StagePlanning);
        assert_eq!(
            (p.temperature, p.top_p, p.presence_penalty, p.max_tokens),
            (0.5, 1.0, 2.0, 200)
        );
        let p = params_for(CallKind::ResponseGeneration);
        assert_eq!(
            (p.temperature, p.top_p, p.presence_penalty, p.max_tokens),
            (0.8, 0.9, 1.5, 300)
        );
        let p = params_for(CallKind::ClientSimulation);
        assert_eq!(
            (p.temperature, p.top_p, p.presence_penalty, p.max_tokens),
            (0.7, 0.5, 2.0, 300)
        );
        let p = params_for(CallKind::ImAnnotation);
        assert_eq!(
            (p.temperature, p.frequency_penalty, p.max_tokens),
            (0.1, 0.2, 512)
        );
        let p = params_for(CallKind::TherapistRolePlay);
        assert_eq!((p.temperature, p.top_p), (1.0, 0.95));
        for kind in CallKind::ALL {
            params_for(kind).validate().unwrap();
            assert_eq!(params_for(kind).beam_size, 1);
        }
    }

    #[test]
    fn overrides() {
        let mut custom = params_for(CallKind::StagePlanning);
        custom.temperature = 0.0;
        let table = ParamTable::default()
            .with_override(CallKind::StagePlanning, custom)
            .unwrap();
        assert_eq!(table.get(CallKind::StagePlanning).temperature, 0.0);
        assert_eq!(
            table.get(CallKind::ReflectionPlanning),
            params_for(CallKind::ReflectionPlanning)
        );
        custom.top_p = 0.0;
        assert!(ParamTable::default()
            .with_override(CallKind::StagePlanning, custom)
            .is_err());
    }

    #[test]
    fn message_checks() {
        assert!(check_messages(&[]).is_err());
        assert!(check_messages(&[ChatMessage::user("hi")]).is_err());
        assert!(check_messages(&[ChatMessage::system("s"), ChatMessage::user(" ")]).is_err());
        assert!(check_messages(&[ChatMessage::system("s"), ChatMessage::user("hi")]).is_ok());
    }

    #[test]
    fn embedding_validation() {
        assert_eq!(EmbeddingVector::new(vec![]), Err(EmbeddingError::Empty));
        assert_eq!(
            EmbeddingVector::new(vec![1.0, f64::NAN]),
            Err(EmbeddingError::NonFinite(1))
        );
        let v: EmbeddingVector = serde_json::from_str("[3.0, 4.0]").unwrap();
        assert_eq!(v.norm(), 5.0);
        assert!(serde_json::from_str::<EmbeddingVector>("[]").is_err());
    }

    #[test]
    fn retry_gives_up_then_reports_unavailable() {
        let policy = RetryPolicy {
            max_retries: 2,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        };
        let calls = AtomicUsize::new(0);
        let r: Result<(), _> = policy.run(|| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Transient("reset".into()))
        });
        assert!(matches!(r, Err(BackendError::BackendUnavailable(_))));
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let calls = AtomicUsize::new(0);
        let r = policy.run(|| {
            if calls.fetch_add(1, Ordering::SeqCst) == 0 {
                Err(BackendError::Transient("blip".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(r, Ok(7));

        let r: Result<(), _> = policy.run(|| {
            Err(BackendError::BackendRefused {
                status: 400,
                message: "bad".into(),
            })
        });
        assert!(matches!(r, Err(BackendError::BackendRefused { .. })));
    }

    #[test]
    fn backoff_grows_and_saturates() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_for(0), Duration::from_millis(500));
        assert_eq!(p.delay_for(1), Duration::from_secs(1));
        assert_eq!(p.delay_for(10), Duration::from_secs(8));
        assert_eq!(p.delay_for(40), Duration::from_secs(8));
    }

    struct Slow {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl ChatBackend for Slow {
        fn complete(&self, _: &[ChatMessage], _: CallKind) -> Result<String, BackendError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            thread::sleep(Duration::from_millis(20));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok("ok".into())
        }

        fn embed(&self, _: &str) -> Result<EmbeddingVector, BackendError> {
            unreachable!()
        }
    }

    #[test]
    fn cap_bounds_in_flight_calls() {
        let capped = Arc::new(CappedBackend::new(
            Slow {
                current: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
            },
            2,
        ));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let b = Arc::clone(&capped);
                thread::spawn(move || {
                    b.complete(&[ChatMessage::system("s")], CallKind::StagePlanning)
                        .unwrap()
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(capped.inner.peak.load(Ordering::SeqCst) <= 2);
    }
}
