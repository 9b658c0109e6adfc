//! Language-model backends.
//!
//! Every backend answers a two-part [`Prompt`]. Scripted and replay backends
//! are deterministic; the HTTP backend talks to a chat-completions endpoint.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
        }
    }

    /// Both parts joined, for substring checks and rule matching.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }

    /// Transcript key: SHA-256 over both parts with an unambiguous separator.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        h.update([0u8]);
        h.update(self.user.as_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
            timeout_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend timed out")]
    Timeout,
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("no recorded completion for prompt {0}")]
    TranscriptMiss(String),
    #[error("backend transport error: {0}")]
    Transport(String),
    #[error("backend not configured: {0}")]
    Unavailable(String),
}

impl BackendError {
    /// Whether trying the same prompt again could succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Timeout | Self::Transport(_) | Self::Malformed(_))
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &Prompt, params: &DecodingParams) -> Result<String, BackendError>;
}

/// One scripted reply, chosen when every `contains` substring is present in
/// the prompt and no `unless` substring is.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default)]
    pub unless: Vec<String>,
    pub reply: String,
}

impl ScriptRule {
    pub fn when(contains: &[&str], reply: &str) -> Self {
        Self {
            contains: contains.iter().map(|s| s.to_string()).collect(),
            unless: Vec::new(),
            reply: reply.to_string(),
        }
    }

    pub fn unless(mut self, absent: &[&str]) -> Self {
        self.unless.extend(absent.iter().map(|s| s.to_string()));
        self
    }

    fn matches(&self, text: &str) -> bool {
        self.contains.iter().all(|c| text.contains(c.as_str()))
            && !self.unless.iter().any(|u| text.contains(u.as_str()))
    }
}

/// First matching rule wins; with no match the fallback (if any) is used.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedBackend {
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub fallback: Option<String>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self {
            rules,
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, reply: &str) -> Self {
        self.fallback = Some(reply.to_string());
        self
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, prompt: &Prompt, _: &DecodingParams) -> Result<String, BackendError> {
        let text = prompt.text();
        self.rules
            .iter()
            .find(|r| r.matches(&text))
            .map(|r| r.reply.clone())
            .or_else(|| self.fallback.clone())
            .ok_or_else(|| BackendError::TranscriptMiss(prompt.hash()))
    }
}

/// Prompt-hash to completion map, stored as a JSON object.
pub type Transcript = BTreeMap<String, String>;

pub fn load_transcript(path: &Path) -> Result<Transcript, BackendError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BackendError::Unavailable(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))
}

pub fn save_transcript(path: &Path, transcript: &Transcript) -> std::io::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(transcript)?)
}

#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    transcript: Transcript,
}

impl ReplayBackend {
    pub fn new(transcript: Transcript) -> Self {
        Self { transcript }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        load_transcript(path).map(Self::new)
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, prompt: &Prompt, _: &DecodingParams) -> Result<String, BackendError> {
        let key = prompt.hash();
        self.transcript
            .get(&key)
            .cloned()
            .ok_or(BackendError::TranscriptMiss(key))
    }
}

/// Passes calls through and keeps every successful completion.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<Transcript>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Mutex::default(),
        }
    }

    pub fn transcript(&self) -> Transcript {
        self.recorded.lock().expect("transcript lock").clone()
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, prompt: &Prompt, params: &DecodingParams) -> Result<String, BackendError> {
        let out = self.inner.complete(prompt, params)?;
        self.recorded
            .lock()
            .expect("transcript lock")
            .insert(prompt.hash(), out.clone());
        Ok(out)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, prompt: &Prompt, params: &DecodingParams) -> Result<String, BackendError> {
        (**self).complete(prompt, params)
    }
}

pub const ENDPOINT_VAR: &str = "COLLAB_LM_ENDPOINT";
pub const API_KEY_VAR: &str = "COLLAB_LM_API_KEY";
pub const MODEL_VAR: &str = "COLLAB_LM_MODEL";

/// Chat-completions client (`POST {endpoint}/chat/completions`).
#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
}

impl HttpBackend {
    /// Reads `COLLAB_LM_ENDPOINT`, `COLLAB_LM_API_KEY` and `COLLAB_LM_MODEL`.
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| BackendError::Unavailable(format!("{ENDPOINT_VAR} is not set")))?;
        Ok(Self {
            endpoint,
            api_key: std::env::var(API_KEY_VAR).ok(),
            model: std::env::var(MODEL_VAR).unwrap_or_else(|_| "gpt-4o".into()),
        })
    }

    fn request_body(&self, prompt: &Prompt, params: &DecodingParams) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        })
    }
}

/// Extracts `choices[0].message.content`.
pub fn parse_chat_response(body: &serde_json::Value) -> Result<String, BackendError> {
    body.pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(String::from)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))
}

impl Backend for HttpBackend {
    fn complete(&self, prompt: &Prompt, params: &DecodingParams) -> Result<String, BackendError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(params.timeout_ms)))
            .build()
            .into();
        let url = format!("{}/chat/completions", self.endpoint.trim_end_matches('/'));
        let mut req = agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.request_body(prompt, params))
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => BackendError::Timeout,
                other => BackendError::Transport(other.to_string()),
            })?;
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Malformed(e.to_string()))?;
        parse_chat_response(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_rules_respect_unless() {
        let b = ScriptedBackend::new(vec![
            ScriptRule::when(&["planning"], "Plan: 2. Take a task action").unless(&["asked"]),
            ScriptRule::when(&["planning"], "Plan: 3. Do nothing"),
        ]);
        let p = |s: &str| Prompt::new("", s);
        let d = DecodingParams::default();
        assert_eq!(b.complete(&p("planning"), &d).unwrap(), "Plan: 2. Take a task action");
        assert_eq!(b.complete(&p("planning, asked"), &d).unwrap(), "Plan: 3. Do nothing");
        assert!(matches!(b.complete(&p("other"), &d), Err(BackendError::TranscriptMiss(_))));
    }

    #[test]
    fn replay_is_byte_identical_to_recording() {
        let rec = RecordingBackend::new(ScriptedBackend::default().with_fallback("Action: DO_NOTHING()\n"));
        let prompt = Prompt::new("sys", "user");
        let d = DecodingParams::default();
        let first = rec.complete(&prompt, &d).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        save_transcript(&path, &rec.transcript()).unwrap();
        let replay = ReplayBackend::load(&path).unwrap();
        assert_eq!(replay.complete(&prompt, &d).unwrap(), first);
        assert!(replay.complete(&Prompt::new("sys", "other"), &d).is_err());
    }

    #[test]
    fn hash_separates_system_and_user() {
        assert_ne!(Prompt::new("ab", "c").hash(), Prompt::new("a", "bc").hash());
    }

    #[test]
    fn chat_response_parsing() {
        let ok = serde_json::json!({"choices": [{"message": {"content": "hi"}}]});
        assert_eq!(parse_chat_response(&ok).unwrap(), "hi");
        assert!(parse_chat_response(&serde_json::json!({"choices": []})).is_err());
        let req = HttpBackend {
            endpoint: "http://x".into(),
            api_key: None,
            model: "m".into(),
        }
        .request_body(&Prompt::new("s", "u"), &DecodingParams::default());
        assert_eq!(req["temperature"], 0.0);
        assert_eq!(req["messages"][1]["content"], "u");
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let b = HttpBackend {
            endpoint: "http://127.0.0.1:9".into(),
            api_key: None,
            model: "m".into(),
        };
        let params = DecodingParams {
            timeout_ms: 2_000,
            ..Default::default()
        };
        let err = b.complete(&Prompt::new("s", "u"), &params).unwrap_err();
        assert!(err.is_transient());
    }
}
