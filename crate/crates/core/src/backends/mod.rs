//! Model backends.
//!
//! Every model role (router, captioner, reasoner, ...) is reached through a
//! [`RoleClient`], which enforces the per-profile parallelism bound, counts
//! calls, and normalizes embeddings. The transport behind it is a [`Backend`]:
//! either [`HttpBackend`] speaking the OpenAI-compatible chat/embeddings shape,
//! or [`MockBackend`] replaying a [`MockScript`].

mod http;
mod mock;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::error::{Error, Result};

pub use http::{build_chat_body, build_embeddings_body, HttpBackend};
pub use mock::{hashed_embedding, DefaultEmbedding, MockBackend, MockFailure, MockReply, MockRule, MockScript, TranscriptEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Router,
    Captioner,
    #[default]
    Reasoner,
    Grader,
    Summarizer,
    Embedder,
    /// Scores predictions against references during evaluation.
    Judge,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Router,
        Role::Captioner,
        Role::Reasoner,
        Role::Grader,
        Role::Summarizer,
        Role::Embedder,
        Role::Judge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Router => "router",
            Role::Captioner => "captioner",
            Role::Reasoner => "reasoner",
            Role::Grader => "grader",
            Role::Summarizer => "summarizer",
            Role::Embedder => "embedder",
            Role::Judge => "judge",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_timeout() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    2
}
fn default_max_parallel() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    250
}

/// Where and how to reach the model serving one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    #[serde(skip)]
    pub role: Role,
    pub endpoint: String,
    pub model_id: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    /// Base delay of the exponential retry backoff.
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    /// Environment variable holding a bearer token, if the endpoint needs one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl BackendProfile {
    pub fn new(role: Role, endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            role,
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            timeout_s: default_timeout(),
            max_retries: default_max_retries(),
            max_parallel: default_max_parallel(),
            retry_backoff_ms: default_backoff_ms(),
            api_key_env: None,
        }
    }

    /// Placeholder profile used when a role is served by a mock script.
    pub fn mock(role: Role) -> Self {
        Self::new(role, "mock://", format!("mock-{role}"))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(Error::invalid(format!("{} profile: timeout_s must be positive", self.role)));
        }
        if self.max_parallel == 0 {
            return Err(Error::invalid(format!("{} profile: max_parallel must be at least 1", self.role)));
        }
        if self.endpoint.trim().is_empty() {
            return Err(Error::invalid(format!("{} profile: endpoint is empty", self.role)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub text: String,
    /// Image files attached to this message, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<PathBuf>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            text: text.into(),
            frames: Vec::new(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            text: text.into(),
            frames: Vec::new(),
        }
    }

    pub fn with_frames(mut self, frames: Vec<PathBuf>) -> Self {
        self.frames = frames;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One completed chat call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<ChatMessage>,
    pub response_text: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<TokenUsage>,
}

/// Reply of a transport, before the role client wraps it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawReply {
    pub text: String,
    pub latency_ms: u64,
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbeddings {
    pub vectors: Vec<Vec<f64>>,
    pub latency_ms: u64,
}

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Scales `values` to unit L2 norm. Zero or non-finite vectors are rejected.
    pub fn normalized(values: Vec<f64>) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        Some(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    /// Wraps a vector that is already unit length (within 1e-6).
    pub fn from_unit(values: Vec<f64>) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        ((norm - 1.0).abs() <= 1e-6).then_some(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; both vectors are unit length so this is the dot product.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedBatch {
    pub vectors: Vec<EmbeddingVector>,
    pub latency_ms: u64,
}

/// A transport able to serve chat and embedding calls.
#[async_trait]
pub trait Backend: Send + Sync {
    async fn chat(&self, profile: &BackendProfile, messages: &[ChatMessage]) -> Result<RawReply>;

    async fn embed(&self, profile: &BackendProfile, texts: &[String]) -> Result<RawEmbeddings>;
}

/// A role bound to its profile and transport.
pub struct RoleClient {
    profile: BackendProfile,
    backend: Arc<dyn Backend>,
    permits: Semaphore,
    calls: AtomicUsize,
    dim: OnceLock<usize>,
}

impl RoleClient {
    pub fn new(profile: BackendProfile, backend: Arc<dyn Backend>) -> Self {
        let permits = Semaphore::new(profile.max_parallel.max(1));
        Self {
            profile,
            backend,
            permits,
            calls: AtomicUsize::new(0),
            dim: OnceLock::new(),
        }
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    pub fn role(&self) -> Role {
        self.profile.role
    }

    /// Number of calls issued through this client so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub async fn chat(&self, messages: Vec<ChatMessage>) -> Result<ChatExchange> {
        if !messages.iter().any(|m| m.role == MessageRole::User) {
            return Err(Error::invalid("a chat request needs at least one user message"));
        }
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| Error::InvalidState("backend client closed".into()))?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let reply = self.backend.chat(&self.profile, &messages).await?;
        Ok(ChatExchange {
            messages,
            response_text: reply.text,
            latency_ms: reply.latency_ms,
            token_usage: reply.usage,
        })
    }

    pub async fn embed(&self, texts: &[String]) -> Result<EmbedBatch> {
        if texts.is_empty() {
            return Err(Error::invalid("nothing to embed"));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::invalid(format!("text #{i} is empty")));
        }
        let raw = {
            let _permit = self
                .permits
                .acquire()
                .await
                .map_err(|_| Error::InvalidState("backend client closed".into()))?;
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.backend.embed(&self.profile, texts).await?
        };

        let role = self.role();
        if raw.vectors.len() != texts.len() {
            return Err(Error::Protocol {
                role,
                message: format!("expected {} embeddings, got {}", texts.len(), raw.vectors.len()),
            });
        }
        let dim = raw.vectors.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || raw.vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Protocol {
                role,
                message: "embedding dimensions differ within a batch".into(),
            });
        }
        let expected = *self.dim.get_or_init(|| dim);
        if expected != dim {
            return Err(Error::Protocol {
                role,
                message: format!("embedding dimension changed from {expected} to {dim}"),
            });
        }
        let vectors = raw
            .vectors
            .into_iter()
            .map(|v| {
                EmbeddingVector::normalized(v).ok_or_else(|| Error::Protocol {
                    role,
                    message: "zero or non-finite embedding".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbedBatch {
            vectors,
            latency_ms: raw.latency_ms,
        })
    }
}

/// All role clients of one running system.
#[derive(Default)]
pub struct BackendSet {
    clients: BTreeMap<Role, RoleClient>,
}

impl BackendSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, profile: BackendProfile, backend: Arc<dyn Backend>) {
        self.clients.insert(profile.role, RoleClient::new(profile, backend));
    }

    pub fn with(mut self, profile: BackendProfile, backend: Arc<dyn Backend>) -> Self {
        self.insert(profile, backend);
        self
    }

    /// Every role in `roles` served by the same mock.
    pub fn all_mock(mock: Arc<MockBackend>, roles: &[Role]) -> Self {
        let mut set = Self::new();
        for &role in roles {
            set.insert(BackendProfile::mock(role), mock.clone());
        }
        set
    }

    pub fn get(&self, role: Role) -> Option<&RoleClient> {
        self.clients.get(&role)
    }

    pub fn client(&self, role: Role) -> Result<&RoleClient> {
        self.get(role)
            .ok_or_else(|| Error::InvalidState(format!("no backend configured for role {role}")))
    }

    pub fn calls(&self, role: Role) -> usize {
        self.get(role).map(RoleClient::calls).unwrap_or(0)
    }

    /// Call counts of every configured role.
    pub fn call_counts(&self) -> BTreeMap<Role, usize> {
        self.clients.iter().map(|(r, c)| (*r, c.calls())).collect()
    }
}
