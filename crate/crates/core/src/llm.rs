//! Chat-completion client with a record/replay transcript cache.
//!
//! Requests are keyed by the SHA-256 of their canonical JSON form
//! (`{"model", "messages", "temperature"}`). In replay mode the network is
//! never touched; a missing transcript is an error naming the digest.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::codec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
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
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ChatError {
    #[error("no cached transcript for request digest {digest}")]
    ReplayMiss { digest: String },
    #[error("chat endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("chat transport failure: {0}")]
    Transport(String),
    #[error("malformed chat response: {0}")]
    Protocol(String),
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid LLM configuration: {0}")]
    Config(String),
    #[error("transcript cache: {0}")]
    Cache(String),
}

/// Anything that can answer a chat conversation with text.
pub trait ChatClient: Send + Sync {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, ChatError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmMode {
    Live,
    Record,
    #[default]
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Full URL of the chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub api_key_env: String,
    pub cache_dir: Option<PathBuf>,
    pub mode: LlmMode,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            temperature: 0.0,
            api_key_env: "OPENAI_API_KEY".into(),
            cache_dir: None,
            mode: LlmMode::Replay,
            timeout_secs: 120,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), ChatError> {
        if self.mode == LlmMode::Replay && self.cache_dir.is_none() {
            return Err(ChatError::Config("replay mode requires cache_dir".into()));
        }
        if self.mode == LlmMode::Record && self.cache_dir.is_none() {
            return Err(ChatError::Config("record mode requires cache_dir".into()));
        }
        if self.mode != LlmMode::Live && self.temperature != 0.0 {
            return Err(ChatError::Config("temperature must be 0 in record/replay mode".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

pub fn request_digest(model: &str, messages: &[ChatMessage], temperature: f64) -> String {
    codec::json_digest(&CanonicalRequest { model, messages, temperature })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTranscript {
    pub request_digest: String,
    pub response_text: String,
    pub recorded_at: String,
}

/// Append-only directory of `<digest>.json` transcripts.
#[derive(Debug, Clone)]
pub struct TranscriptCache {
    dir: PathBuf,
}

impl TranscriptCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ChatError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| ChatError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Option<ChatTranscript> {
        let text = std::fs::read_to_string(self.path(digest)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Stores a transcript via temp-file rename. Returns false when an entry
    /// for the digest already exists; existing entries are never replaced.
    pub fn insert(&self, digest: &str, response_text: &str) -> Result<bool, ChatError> {
        use std::io::Write;
        let final_path = self.path(digest);
        if final_path.exists() {
            return Ok(false);
        }
        let transcript = ChatTranscript {
            request_digest: digest.to_string(),
            response_text: response_text.to_string(),
            recorded_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        let cache_err = |e: std::io::Error| ChatError::Cache(e.to_string());
        let mut tmp = tempfile::Builder::new()
            .prefix(".transcript-")
            .suffix(".tmp")
            .tempfile_in(&self.dir)
            .map_err(cache_err)?;
        tmp.write_all(codec::to_json_pretty(&transcript).as_bytes()).map_err(cache_err)?;
        match tmp.persist_noclobber(&final_path) {
            Ok(_) => Ok(true),
            Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => Ok(false),
            Err(e) => Err(cache_err(e.error)),
        }
    }

    /// Convenience for building fixtures: stores `response` for the exact request.
    pub fn insert_for(
        &self,
        model: &str,
        messages: &[ChatMessage],
        temperature: f64,
        response: &str,
    ) -> Result<String, ChatError> {
        let digest = request_digest(model, messages, temperature);
        self.insert(&digest, response)?;
        Ok(digest)
    }
}

/// Chat client honouring [`LlmMode`].
pub struct LlmClient {
    config: LlmConfig,
    cache: Option<TranscriptCache>,
    agent: ureq::Agent,
    network_calls: AtomicUsize,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("config", &self.config).finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: String,
}

impl LlmClient {
    pub fn new(config: LlmConfig) -> Result<Self, ChatError> {
        config.validate()?;
        let cache = config.cache_dir.as_ref().map(TranscriptCache::open).transpose()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, cache, agent, network_calls: AtomicUsize::new(0) })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// Number of HTTP requests issued so far.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn digest(&self, messages: &[ChatMessage]) -> String {
        request_digest(&self.config.model, messages, self.config.temperature)
    }

    fn call_live(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let mut request = self.agent.post(&self.config.endpoint);
        match std::env::var(&self.config.api_key_env) {
            Ok(key) => request = request.header("Authorization", &format!("Bearer {key}")),
            Err(_) => return Err(ChatError::MissingApiKey(self.config.api_key_env.clone())),
        }
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let body = CanonicalRequest {
            model: &self.config.model,
            messages,
            temperature: self.config.temperature,
        };
        let mut response = request.send_json(&body).map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(ChatError::Status { status, body: text });
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&text).map_err(|e| ChatError::Protocol(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ChatError::Protocol("response has no choices".into()))
    }
}

impl ChatClient for LlmClient {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        match self.config.mode {
            LlmMode::Live => self.call_live(messages),
            LlmMode::Replay => {
                let digest = self.digest(messages);
                let cache = self.cache.as_ref().expect("validated: replay has a cache");
                cache
                    .get(&digest)
                    .map(|t| t.response_text)
                    .ok_or(ChatError::ReplayMiss { digest })
            }
            LlmMode::Record => {
                let digest = self.digest(messages);
                let cache = self.cache.as_ref().expect("validated: record has a cache");
                if let Some(t) = cache.get(&digest) {
                    return Ok(t.response_text);
                }
                let text = self.call_live(messages)?;
                cache.insert(&digest, &text)?;
                Ok(text)
            }
        }
    }
}
