//! Captioning, fused-context assembly, hierarchical reasoning, summarization
//! and the per-route dispatch.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ats::{self, FrameIndexSet, FrameManifest, SampledFrame};
use crate::backends::{BackendSet, ChatMessage, Role};
use crate::error::{Error, Result};
use crate::knowledge::{self, KnowledgeBase, RetrievedContext};
use crate::router::RoutePath;
use crate::trace::{Session, Stage};

pub const ANSWER_DELIMITER: &str = "===ANSWER===";

pub const CAPTION_SYSTEM_PROMPT: &str = "\
You describe waterway scenes observed from an autonomous surface vessel.
The attached images are key frames of one clip in temporal order.
Describe the vessels, navigation marks, shoreline, weather and visibility, and how \
objects move across the frames. State only what is visible.";

pub const CAPTION_REQUEST: &str = "Describe this scene for a navigation assistant.";

pub const REASONER_SYSTEM_PROMPT: &str = "\
You are the reasoning officer of an autonomous surface vessel. Answer in two stages.
LEVEL 1 - PERCEPTUAL GROUNDING: list what the frames and scene description show and align \
each observation with the applicable rules, citing them by label.
LEVEL 2 - CAUSAL DEDUCTION: infer motion, risk and the consequences of possible actions, \
treating the applicable rules as hard constraints.
Then write a line containing only ===ANSWER=== followed by the final answer.";

pub const SUMMARY_SYSTEM_PROMPT: &str = "\
Condense the reasoning below into concise navigation guidance for the operator. \
Keep the decision and the rule it rests on. Reply with the guidance only.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCaption {
    pub text: String,
    pub frame_indices_used: FrameIndexSet,
}

/// The conditioning set handed to the reasoner: frames, question, caption, rules.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedContext {
    pub visual: Vec<SampledFrame>,
    pub question: String,
    pub caption: Option<SceneCaption>,
    pub rules: Option<RetrievedContext>,
}

impl FusedContext {
    pub fn new(
        visual: Vec<SampledFrame>,
        question: impl Into<String>,
        caption: Option<SceneCaption>,
        rules: Option<RetrievedContext>,
    ) -> Result<Self> {
        let question = question.into();
        if question.trim().is_empty() {
            return Err(Error::invalid("question is empty"));
        }
        Ok(Self {
            visual,
            question,
            caption,
            rules,
        })
    }

    /// Prompt text with labeled sections in fixed order. Absent segments are left out.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.visual.is_empty() {
            let positions: Vec<String> = self.visual.iter().map(|f| f.position.to_string()).collect();
            let _ = write!(
                out,
                "VIDEO FRAMES\n{} key frames attached in temporal order (clip positions {}).\n\n",
                self.visual.len(),
                positions.join(", ")
            );
        }
        let _ = write!(out, "QUESTION\n{}\n", self.question.trim());
        if let Some(caption) = &self.caption {
            let _ = write!(out, "\nSCENE DESCRIPTION\n{}\n", caption.text.trim());
        }
        if let Some(rules) = self.rules.as_ref().filter(|r| !r.is_empty()) {
            out.push_str("\nAPPLICABLE RULES\n");
            for (i, hit) in rules.hits.iter().enumerate() {
                let chunk = &hit.chunk;
                let label = chunk.section_label.as_deref().unwrap_or(&chunk.source_doc);
                let _ = write!(out, "[{}] {} ({})\n{}\n", i + 1, label, chunk.chunk_id, chunk.text);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDraft {
    pub reasoning_text: String,
    pub final_text: String,
    pub path_taken: RoutePath,
}

/// Splits a reasoner reply at the answer delimiter.
pub fn split_answer(response: &str) -> (String, String) {
    match response.split_once(ANSWER_DELIMITER) {
        Some((reasoning, answer)) => (reasoning.trim().to_string(), answer.trim().to_string()),
        None => (String::new(), response.trim().to_string()),
    }
}

pub async fn caption(frames: &[SampledFrame], requested_k: usize, backends: &BackendSet, session: &Session) -> Result<SceneCaption> {
    if frames.is_empty() {
        return Err(Error::invalid("captioning needs at least one frame"));
    }
    let captioner = backends.client(Role::Captioner)?;
    let messages = vec![
        ChatMessage::system(CAPTION_SYSTEM_PROMPT),
        ChatMessage::user(CAPTION_REQUEST).with_frames(frames.iter().map(|f| f.path.clone()).collect()),
    ];
    let ex = captioner
        .chat(messages)
        .await
        .map_err(|e| Error::CaptionUnavailable(e.to_string()))?;
    session.charge(ex.latency_ms);
    if ex.response_text.trim().is_empty() {
        return Err(Error::CaptionUnavailable("captioner returned an empty description".into()));
    }
    let frame_indices_used = FrameIndexSet {
        indices: frames.iter().map(|f| f.position).collect(),
        requested_k,
    };
    session.record(
        Stage::Caption,
        ex.latency_ms,
        json!({ "frame_indices": frame_indices_used.indices, "text": ex.response_text }),
    );
    Ok(SceneCaption {
        text: ex.response_text,
        frame_indices_used,
    })
}

/// One reasoner call over the rendered context. `attempt` is 0 for the first answer.
pub async fn reason(
    context: &FusedContext,
    path: RoutePath,
    attempt: usize,
    backends: &BackendSet,
    session: &Session,
) -> Result<AnswerDraft> {
    let reasoner = backends.client(Role::Reasoner)?;
    let prompt = context.render();
    let frames = context.visual.iter().map(|f| f.path.clone()).collect();
    let messages = vec![
        ChatMessage::system(REASONER_SYSTEM_PROMPT),
        ChatMessage::user(prompt.clone()).with_frames(frames),
    ];
    let ex = reasoner
        .chat(messages)
        .await
        .map_err(|e| Error::ReasoningFailed(e.to_string()))?;
    session.charge(ex.latency_ms);
    let (reasoning_text, final_text) = split_answer(&ex.response_text);
    if final_text.is_empty() {
        return Err(Error::ReasoningFailed("reasoner returned an empty answer".into()));
    }
    let mut data = session.prompt_fields(&prompt);
    data["attempt"] = json!(attempt);
    data["frames"] = json!(context.visual.len());
    data["rules"] = json!(context.rules.as_ref().map(|r| r.chunk_ids()).unwrap_or_default());
    data["final_text"] = json!(final_text);
    session.record(Stage::Reason, ex.latency_ms, data);
    Ok(AnswerDraft {
        reasoning_text,
        final_text,
        path_taken: path,
    })
}

/// Condenses a draft into operator guidance. Never fails: an empty reasoning
/// chain or a summarizer error returns the draft's final text.
pub async fn summarize(draft: &AnswerDraft, question: &str, backends: &BackendSet, session: &Session) -> String {
    if draft.reasoning_text.trim().is_empty() {
        session.record(Stage::Summary, 0, json!({ "skipped": true, "answer": draft.final_text }));
        return draft.final_text.clone();
    }
    let result = match backends.client(Role::Summarizer) {
        Ok(summarizer) => {
            let user = format!(
                "QUESTION\n{}\n\nREASONING\n{}\n\nANSWER\n{}",
                question.trim(),
                draft.reasoning_text,
                draft.final_text
            );
            summarizer
                .chat(vec![ChatMessage::system(SUMMARY_SYSTEM_PROMPT), ChatMessage::user(user)])
                .await
        }
        Err(e) => Err(e),
    };
    match result {
        Ok(ex) if !ex.response_text.trim().is_empty() => {
            session.charge(ex.latency_ms);
            let answer = ex.response_text.trim().to_string();
            session.record(Stage::Summary, ex.latency_ms, json!({ "skipped": false, "answer": answer }));
            answer
        }
        other => {
            let reason = match other {
                Ok(ex) => {
                    session.charge(ex.latency_ms);
                    "summarizer returned empty text".to_string()
                }
                Err(e) => e.to_string(),
            };
            session.warn(format!("summary skipped: {reason}"));
            session.record(Stage::Summary, 0, json!({ "skipped": true, "answer": draft.final_text }));
            draft.final_text.clone()
        }
    }
}

/// Sizes used by the branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DispatchConfig {
    pub target_k: usize,
    pub top_k: usize,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self {
            target_k: ats::DEFAULT_TARGET_K,
            top_k: knowledge::DEFAULT_TOP_K,
        }
    }
}

/// Everything needed to grade an answer and regenerate it with more rules.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningState {
    pub path: RoutePath,
    pub context: FusedContext,
    /// Retrieval query: the question, plus the caption when one exists.
    pub query: String,
    pub draft: AnswerDraft,
}

pub(crate) fn sample_traced(manifest: &FrameManifest, target_k: usize, session: &Session) -> Result<Vec<SampledFrame>> {
    let frames = ats::sample(manifest, target_k)?;
    session.record(
        Stage::Sample,
        0,
        json!({
            "clip_id": manifest.clip_id,
            "frame_count": manifest.frame_count(),
            "requested_k": target_k,
            "indices": frames.iter().map(|f| f.position).collect::<Vec<_>>(),
        }),
    );
    Ok(frames)
}

pub(crate) async fn retrieve_traced(
    kb: &KnowledgeBase,
    query: &str,
    top_k: usize,
    backends: &BackendSet,
    session: &Session,
) -> Result<RetrievedContext> {
    let r = knowledge::retrieve(kb, query, top_k, backends.client(Role::Embedder)?).await?;
    session.charge(r.latency_ms);
    session.record(Stage::Retrieve, r.latency_ms, retrieval_data(query, &r.context, session));
    Ok(r.context)
}

pub(crate) fn retrieval_data(query: &str, context: &RetrievedContext, session: &Session) -> serde_json::Value {
    let mut data = json!({
        "query_sha256": crate::trace::sha256_hex(query),
        "requested_k": context.requested_k,
        "hits": context.hits.iter().map(|h| json!({ "chunk_id": h.chunk.chunk_id, "score": h.score })).collect::<Vec<_>>(),
    });
    if session.full_prompts() {
        data["query"] = json!(query);
    }
    data
}

fn need_clip(manifest: Option<&FrameManifest>) -> Result<&FrameManifest> {
    manifest.ok_or_else(|| Error::invalid("this question needs a video clip, but none was given"))
}

/// Runs the branch for `path`. Errors carry the branch identity.
pub async fn dispatch(
    path: RoutePath,
    question: &str,
    manifest: Option<&FrameManifest>,
    kb: &KnowledgeBase,
    config: DispatchConfig,
    backends: &BackendSet,
    session: &Session,
) -> Result<ReasoningState> {
    run_branch(path, question, manifest, kb, config, backends, session)
        .await
        .map_err(|source| Error::Branch {
            path,
            source: Box::new(source),
        })
}

async fn run_branch(
    path: RoutePath,
    question: &str,
    manifest: Option<&FrameManifest>,
    kb: &KnowledgeBase,
    config: DispatchConfig,
    backends: &BackendSet,
    session: &Session,
) -> Result<ReasoningState> {
    let query = knowledge::build_query(question, None)?;
    let (context, query) = match path {
        RoutePath::FastVision => {
            let frames = sample_traced(need_clip(manifest)?, config.target_k, session)?;
            (FusedContext::new(frames, question, None, None)?, query)
        }
        RoutePath::FastRag => {
            let rules = retrieve_traced(kb, &query, config.top_k, backends, session).await?;
            (FusedContext::new(Vec::new(), question, None, Some(rules))?, query)
        }
        RoutePath::ComplexReasoning => {
            let frames = sample_traced(need_clip(manifest)?, config.target_k, session)?;
            let scene = match caption(&frames, config.target_k, backends, session).await {
                Ok(c) => Some(c),
                Err(e) => {
                    session.warn(format!("continuing without a scene description: {e}"));
                    None
                }
            };
            let query = knowledge::build_query(question, scene.as_ref().map(|c| c.text.as_str()))?;
            let rules = retrieve_traced(kb, &query, config.top_k, backends, session).await?;
            (FusedContext::new(frames, question, scene, Some(rules))?, query)
        }
    };
    let draft = reason(&context, path, 0, backends, session).await?;
    Ok(ReasoningState {
        path,
        context,
        query,
        draft,
    })
}
