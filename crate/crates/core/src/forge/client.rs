use std::io::{self, Write};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{ForgeError, PromptPack, SubAnswerSet, SubQuestion};

pub const API_KEY_ENV: &str = "SURGVQLA_API_KEY";
const COMPLETIONS_PATH: &str = "/v1/chat/completions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
    /// First retry delay; doubled on each further attempt.
    pub backoff_base: Duration,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            temperature: 0.7,
            api_key: None,
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
        }
    }

    /// Reads the API key from the environment, if set.
    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    pub fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with(COMPLETIONS_PATH) {
            base.to_string()
        } else {
            format!("{base}{COMPLETIONS_PATH}")
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.backoff_base.saturating_mul(1 << (attempt - 1).min(16))
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Other(String),
}

/// Sends one JSON body and returns the status code and response text.
pub trait ChatTransport {
    fn post(&self, url: &str, api_key: Option<&str>, body: &str)
        -> Result<(u16, String), TransportError>;
}

#[cfg(feature = "http")]
pub struct UreqTransport {
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl UreqTransport {
    pub fn new(endpoint: &EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

#[cfg(feature = "http")]
impl ChatTransport for UreqTransport {
    fn post(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &str,
    ) -> Result<(u16, String), TransportError> {
        let classify = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            ureq::Error::Io(io) if io.kind() == io::ErrorKind::TimedOut => TransportError::Timeout,
            other => TransportError::Other(other.to_string()),
        };
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(classify)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(classify)?;
        Ok((status, text))
    }
}

pub fn chat_request(pack: &PromptPack, sub: &SubQuestion, endpoint: &EndpointConfig) -> Value {
    json!({
        "model": endpoint.model,
        "temperature": endpoint.temperature,
        "messages": [
            { "role": "system", "content": pack.system_prompt },
            { "role": "user", "content": format!("Frame {}. {}", pack.image_id, sub.prompt) },
        ],
    })
}

/// Extracts `choices[0].message.content` from a completion body.
pub fn read_completion(body: &str) -> Result<String, ForgeError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| ForgeError::MalformedResponse(format!("invalid JSON: {e}")))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ForgeError::MalformedResponse("missing choices[0].message.content".into()))?
        .trim();
    if content.is_empty() {
        return Err(ForgeError::MalformedResponse("empty completion".into()));
    }
    Ok(content.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub image_id: String,
    pub slot: String,
    pub attempt: u32,
    pub request: Value,
    pub status: Option<u16>,
    pub response: Option<String>,
    pub error: Option<String>,
    pub timestamp_ms: u64,
}

/// Append-only JSONL log of every endpoint attempt, shared across workers.
pub struct AuditLog<W> {
    out: Mutex<W>,
}

impl<W: Write> AuditLog<W> {
    pub fn new(out: W) -> Self {
        Self { out: Mutex::new(out) }
    }

    pub fn record(&self, entry: &AuditEntry) -> io::Result<()> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        let mut out = self.out.lock().expect("audit log lock");
        out.write_all(&line)?;
        out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out.into_inner().expect("audit log lock")
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn ask<T: ChatTransport, W: Write>(
    pack: &PromptPack,
    sub: &SubQuestion,
    endpoint: &EndpointConfig,
    transport: &T,
    audit: &AuditLog<W>,
) -> Result<String, ForgeError> {
    let request = chat_request(pack, sub, endpoint);
    let body = request.to_string();
    let url = endpoint.url();
    let attempts = endpoint.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        let sent = transport.post(&url, endpoint.api_key.as_deref(), &body);
        let (status, response) = match &sent {
            Ok((s, r)) => (Some(*s), Some(r.clone())),
            Err(_) => (None, None),
        };
        let result = match sent {
            Ok((200..=299, text)) => read_completion(&text),
            Ok((status, body)) => Err(ForgeError::HttpError { status, body }),
            Err(TransportError::Timeout) => Err(ForgeError::Timeout),
            Err(TransportError::Other(m)) => Err(ForgeError::Transport(m)),
        };
        audit.record(&AuditEntry {
            image_id: pack.image_id.clone(),
            slot: sub.slot.to_string(),
            attempt,
            request: request.clone(),
            status,
            response,
            error: result.as_ref().err().map(ToString::to_string),
            timestamp_ms: now_ms(),
        })?;
        match result {
            Err(e) if e.is_retryable() && attempt < attempts => {
                std::thread::sleep(endpoint.backoff(attempt));
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Asks every sub-question of a pack in order, retrying failed attempts.
pub fn fetch_sub_answers<T: ChatTransport, W: Write>(
    pack: &PromptPack,
    endpoint: &EndpointConfig,
    transport: &T,
    audit: &AuditLog<W>,
) -> Result<SubAnswerSet, ForgeError> {
    let mut answers = std::collections::BTreeMap::new();
    for sub in &pack.sub_questions {
        answers.insert(sub.slot, ask(pack, sub, endpoint, transport, audit)?);
    }
    Ok(SubAnswerSet::generated(answers))
}
