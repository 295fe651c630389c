//! Scripted, deterministic backend.
//!
//! A script is an ordered list of rules. For each call the first rule whose
//! role and pattern match is taken; successive matches of the same rule walk
//! its `replies` list and then keep repeating the last reply. Chat calls are
//! matched against the newline-joined text of their user messages (system
//! prompts are ignored); embedding calls are matched one text at a time.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendProfile, ChatMessage, MessageRole, RawEmbeddings, RawReply, Role};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Vector(Vec<f64>),
    Fail { fail: MockFailure },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockFailure {
    /// Surfaces as a transport error, as if every retry timed out.
    Timeout,
    /// Surfaces as a protocol error.
    Malformed,
    /// Surfaces as a backend failure with this HTTP status.
    Status(u16),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
    /// Matches only the n-th (0-based) call issued to this role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<usize>,
    pub replies: Vec<MockReply>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

impl MockRule {
    pub fn text(role: Role, contains: impl Into<String>, replies: &[&str]) -> Self {
        Self {
            role: Some(role),
            contains: Some(contains.into()),
            replies: replies.iter().map(|r| MockReply::Text((*r).to_string())).collect(),
            ..Self::default()
        }
    }

    pub fn vector(text: impl Into<String>, vector: Vec<f64>) -> Self {
        Self {
            role: Some(Role::Embedder),
            equals: Some(text.into()),
            replies: vec![MockReply::Vector(vector)],
            ..Self::default()
        }
    }

    pub fn failing(role: Role, contains: impl Into<String>, failure: MockFailure) -> Self {
        Self {
            role: Some(role),
            contains: Some(contains.into()),
            replies: vec![MockReply::Fail { fail: failure }],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefaultEmbedding {
    /// Signed feature hashing of lowercase word tokens into `dim` buckets.
    Hashed { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Reply for chat calls no rule matched, per role.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub defaults: BTreeMap<Role, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_embedding: Option<DefaultEmbedding>,
    /// Simulated latency per role when a rule sets none.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub latency_ms: BTreeMap<Role, u64>,
}

impl MockScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let script: MockScript = serde_json::from_str(&raw)?;
        script.compile()?;
        Ok(script)
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn default_reply(mut self, role: Role, text: impl Into<String>) -> Self {
        self.defaults.insert(role, text.into());
        self
    }

    pub fn hashed_embeddings(mut self, dim: usize) -> Self {
        self.default_embedding = Some(DefaultEmbedding::Hashed { dim });
        self
    }

    fn compile(&self) -> Result<Vec<Option<Regex>>> {
        self.rules
            .iter()
            .enumerate()
            .map(|(i, rule)| {
                if rule.replies.is_empty() {
                    return Err(Error::invalid(format!("mock rule #{i} has no replies")));
                }
                rule.regex
                    .as_deref()
                    .map(Regex::new)
                    .transpose()
                    .map_err(|e| Error::invalid(format!("mock rule #{i}: bad regex: {e}")))
            })
            .collect()
    }
}

/// One call observed by the mock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: Role,
    pub request: String,
    /// Number of image parts attached to the request.
    pub frames: usize,
    pub reply: String,
}

#[derive(Default)]
struct MockState {
    rule_hits: Vec<usize>,
    role_calls: BTreeMap<Role, usize>,
    transcript: Vec<TranscriptEntry>,
}

pub struct MockBackend {
    script: MockScript,
    patterns: Vec<Option<Regex>>,
    state: Mutex<MockState>,
}

impl MockBackend {
    /// Panics on an invalid script; use [`MockBackend::try_new`] for untrusted input.
    pub fn new(script: MockScript) -> Self {
        Self::try_new(script).expect("invalid mock script")
    }

    pub fn try_new(script: MockScript) -> Result<Self> {
        let patterns = script.compile()?;
        let state = MockState {
            rule_hits: vec![0; script.rules.len()],
            ..MockState::default()
        };
        Ok(Self {
            script,
            patterns,
            state: Mutex::new(state),
        })
    }

    /// Every call seen so far, in arrival order.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).transcript.clone()
    }

    pub fn transcript_for(&self, role: Role) -> Vec<TranscriptEntry> {
        self.transcript().into_iter().filter(|e| e.role == role).collect()
    }

    fn matches(&self, idx: usize, role: Role, text: &str, call_no: usize) -> bool {
        let rule = &self.script.rules[idx];
        rule.role.is_none_or(|r| r == role)
            && rule.call.is_none_or(|c| c == call_no)
            && rule.contains.as_deref().is_none_or(|p| text.contains(p))
            && rule.equals.as_deref().is_none_or(|p| text == p)
            && self.patterns[idx].as_ref().is_none_or(|re| re.is_match(text))
    }

    /// Picks the reply for one call and records it. `None` means no rule matched.
    fn next_reply(&self, role: Role, text: &str, frames: usize) -> (Option<MockReply>, u64) {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let call_no = {
            let n = state.role_calls.entry(role).or_insert(0);
            *n += 1;
            *n - 1
        };
        let default_latency = self.script.latency_ms.get(&role).copied().unwrap_or(0);
        let picked = (0..self.script.rules.len()).find(|&i| self.matches(i, role, text, call_no));
        let (reply, latency) = match picked {
            Some(i) => {
                let rule = &self.script.rules[i];
                let hit = state.rule_hits[i];
                state.rule_hits[i] += 1;
                let reply = rule.replies[hit.min(rule.replies.len() - 1)].clone();
                (Some(reply), rule.latency_ms.unwrap_or(default_latency))
            }
            None => (None, default_latency),
        };
        let shown = match &reply {
            Some(MockReply::Text(t)) => t.clone(),
            Some(MockReply::Vector(v)) => format!("<vector dim={}>", v.len()),
            Some(MockReply::Fail { fail }) => format!("<fail {fail:?}>"),
            None => "<unmatched>".to_string(),
        };
        state.transcript.push(TranscriptEntry {
            role,
            request: text.to_string(),
            frames,
            reply: shown,
        });
        (reply, latency)
    }
}

fn failure(role: Role, fail: MockFailure) -> Error {
    match fail {
        MockFailure::Timeout => Error::RetryableTransport {
            role,
            message: "scripted timeout".into(),
        },
        MockFailure::Malformed => Error::Protocol {
            role,
            message: "scripted malformed response".into(),
        },
        MockFailure::Status(status) => Error::BackendFailure {
            role,
            status: Some(status),
            message: "scripted failure".into(),
        },
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn chat(&self, profile: &BackendProfile, messages: &[ChatMessage]) -> Result<RawReply> {
        let role = profile.role;
        let text = messages
            .iter()
            .filter(|m| m.role == MessageRole::User)
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let frames = messages.iter().map(|m| m.frames.len()).sum();
        let (reply, latency_ms) = self.next_reply(role, &text, frames);
        let text = match reply {
            Some(MockReply::Text(t)) => t,
            Some(MockReply::Fail { fail }) => return Err(failure(role, fail)),
            Some(MockReply::Vector(_)) => {
                return Err(Error::Protocol {
                    role,
                    message: "mock rule returned a vector for a chat call".into(),
                })
            }
            None => match self.script.defaults.get(&role) {
                Some(t) => t.clone(),
                None => {
                    return Err(Error::BackendFailure {
                        role,
                        status: None,
                        message: "no mock rule matched".into(),
                    })
                }
            },
        };
        Ok(RawReply {
            text,
            latency_ms,
            usage: None,
        })
    }

    async fn embed(&self, profile: &BackendProfile, texts: &[String]) -> Result<RawEmbeddings> {
        let role = profile.role;
        let mut vectors = Vec::with_capacity(texts.len());
        let mut latency_ms = 0;
        for text in texts {
            let (reply, latency) = self.next_reply(role, text, 0);
            latency_ms = latency_ms.max(latency);
            let vector = match reply {
                Some(MockReply::Vector(v)) => v,
                Some(MockReply::Fail { fail }) => return Err(failure(role, fail)),
                Some(MockReply::Text(_)) => {
                    return Err(Error::Protocol {
                        role,
                        message: "mock rule returned text for an embedding call".into(),
                    })
                }
                None => match self.script.default_embedding {
                    Some(DefaultEmbedding::Hashed { dim }) => hashed_embedding(text, dim),
                    None => {
                        return Err(Error::BackendFailure {
                            role,
                            status: None,
                            message: format!("no mock vector for {text:?}"),
                        })
                    }
                },
            };
            vectors.push(vector);
        }
        Ok(RawEmbeddings { vectors, latency_ms })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Deterministic bag-of-words embedding. Never all-zero for non-empty text.
pub fn hashed_embedding(text: &str, dim: usize) -> Vec<f64> {
    let dim = dim.max(1);
    let mut v = vec![0.0; dim];
    for token in crate::metrics::tokenize(text).tokens() {
        let h = fnv1a(token.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    if v.iter().all(|x| *x == 0.0) {
        v[(fnv1a(text.as_bytes()) % dim as u64) as usize] = 1.0;
    }
    v
}
