//! Semantic routing of questions to one of three inference pathways.
//!
//! The router backend is asked for a single label. Anything that does not
//! parse to a canonical label, and any backend failure, falls back to
//! [`RoutePath::ComplexReasoning`]: the deepest pipeline is the safe default.

use serde::{Deserialize, Serialize};

use crate::backends::{ChatMessage, RoleClient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoutePath {
    /// Perception answered from the frames alone; no retrieval, no caption.
    FastVision,
    /// Knowledge questions answered from retrieved rules; no frames.
    FastRag,
    /// Frames, caption, caption-conditioned retrieval and full reasoning.
    ComplexReasoning,
}

impl RoutePath {
    pub const ALL: [RoutePath; 3] = [RoutePath::FastVision, RoutePath::FastRag, RoutePath::ComplexReasoning];

    pub fn as_str(self) -> &'static str {
        match self {
            RoutePath::FastVision => "FastVision",
            RoutePath::FastRag => "FastRag",
            RoutePath::ComplexReasoning => "ComplexReasoning",
        }
    }

    /// Case-, space- and punctuation-insensitive match against the canonical labels.
    pub fn parse_label(text: &str) -> Option<RoutePath> {
        let norm: String = text
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match norm.as_str() {
            "fastvision" => Some(RoutePath::FastVision),
            "fastrag" => Some(RoutePath::FastRag),
            "complexreasoning" => Some(RoutePath::ComplexReasoning),
            _ => None,
        }
    }
}

impl std::fmt::Display for RoutePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RoutePath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RoutePath::parse_label(s).ok_or_else(|| format!("unknown route {s:?}; expected FastVision, FastRag or ComplexReasoning"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub path: RoutePath,
    /// Backend output as received; empty when the backend failed.
    pub raw_label: String,
    pub used_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteOutcome {
    pub decision: RouteDecision,
    pub latency_ms: u64,
    /// Why the fallback was taken, when it was.
    pub fallback_reason: Option<String>,
}

pub const ROUTER_SYSTEM_PROMPT: &str = "\
You dispatch questions asked about a live waterway video feed to one of three pipelines.
Reply with exactly one label and nothing else:
FastVision - instant perceptual checks answerable from the video alone.
FastRag - explicit knowledge questions about navigation rules, marks, lights or signals that need no video.
ComplexReasoning - causal, predictive or rule-compliance reasoning about the current scene.

Examples:
Q: Is there a boat ahead?
A: FastVision
Q: What does a green buoy signify?
A: FastRag
Q: Predict the collision risk based on current trajectories
A: ComplexReasoning";

fn fallback(raw_label: String, latency_ms: u64, reason: String) -> RouteOutcome {
    RouteOutcome {
        decision: RouteDecision {
            path: RoutePath::ComplexReasoning,
            raw_label,
            used_fallback: true,
        },
        latency_ms,
        fallback_reason: Some(reason),
    }
}

/// Classifies a question. Never fails.
pub async fn route(question: &str, router: &RoleClient) -> RouteOutcome {
    if question.trim().is_empty() {
        return fallback(String::new(), 0, "empty question".into());
    }
    let messages = vec![ChatMessage::system(ROUTER_SYSTEM_PROMPT), ChatMessage::user(question)];
    match router.chat(messages).await {
        Ok(ex) => {
            let raw = ex.response_text;
            let parsed = RoutePath::parse_label(raw.trim())
                .or_else(|| raw.lines().find(|l| !l.trim().is_empty()).and_then(RoutePath::parse_label));
            match parsed {
                Some(path) => RouteOutcome {
                    decision: RouteDecision {
                        path,
                        raw_label: raw,
                        used_fallback: false,
                    },
                    latency_ms: ex.latency_ms,
                    fallback_reason: None,
                },
                None => {
                    let reason = format!("unparseable router output {raw:?}");
                    fallback(raw, ex.latency_ms, reason)
                }
            }
        }
        Err(e) => fallback(String::new(), 0, format!("router backend failed: {e}")),
    }
}
