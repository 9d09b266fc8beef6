//! OpenAI-compatible chat-completions and embeddings client.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_messages, BackendError, CallKind, ChatBackend, ChatMessage, EmbeddingVector, ParamTable,
    RetryPolicy,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    /// Base URL up to and including the API version, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    /// Default chat model.
    pub model: String,
    /// Per-call-kind model names that replace `model`.
    pub models: BTreeMap<CallKind, String>,
    pub embedding_model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl HttpBackendConfig {
    pub fn model_for(&self, kind: CallKind) -> &str {
        self.models.get(&kind).map_or(&self.model, String::as_str)
    }
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            models: BTreeMap::new(),
            embedding_model: "text-embedding-3-small".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    params: ParamTable,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpBackend {
    /// Reads the API key from the configured variable; a missing key is only
    /// an error for endpoints that reject anonymous calls.
    pub fn new(config: HttpBackendConfig, params: ParamTable, retry: RetryPolicy) -> Self {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key,
            params,
            retry,
            agent,
        }
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.base_url.trim_end_matches('/'))
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let mut req = self
            .agent
            .post(self.url(path))
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        classify_status(status, &text)?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Transient(format!("malformed response body: {e}")))
    }
}

fn transport_error(e: ureq::Error) -> BackendError {
    BackendError::Transient(e.to_string())
}

fn classify_status(status: u16, body: &str) -> Result<(), BackendError> {
    match status {
        200..=299 => Ok(()),
        429 | 500..=599 => Err(BackendError::Transient(format!("status {status}"))),
        _ => Err(BackendError::BackendRefused {
            status,
            message: body.chars().take(500).collect(),
        }),
    }
}

/// JSON body of a chat-completions request.
pub(crate) fn chat_request_body(
    model: &str,
    messages: &[ChatMessage],
    kind: CallKind,
    params: &ParamTable,
) -> Value {
    let p = params.get(kind);
    json!({
        "model": model,
        "messages": messages,
        "temperature": p.temperature,
        "top_p": p.top_p,
        "frequency_penalty": p.frequency_penalty,
        "presence_penalty": p.presence_penalty,
        "max_tokens": p.max_tokens,
    })
}

fn completion_text(v: &Value) -> Result<String, BackendError> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| BackendError::Transient("response has no choices[0].message.content".into()))
}

fn embedding_values(v: &Value) -> Result<EmbeddingVector, BackendError> {
    let values: Vec<f64> = v
        .pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::Transient("response has no data[0].embedding".into()))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| BackendError::Transient("non-numeric embedding component".into()))
        })
        .collect::<Result<_, _>>()?;
    EmbeddingVector::new(values).map_err(|e| BackendError::Transient(e.to_string()))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage], kind: CallKind) -> Result<String, BackendError> {
        check_messages(messages)?;
        let body = chat_request_body(self.config.model_for(kind), messages, kind, &self.params);
        self.retry
            .run(|| completion_text(&self.post("chat/completions", &body)?))
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "cannot embed empty text".into(),
            ));
        }
        let body = json!({ "model": self.config.embedding_model, "input": text });
        self.retry
            .run(|| embedding_values(&self.post("embeddings", &body)?))
    }
}
