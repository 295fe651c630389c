//! Grader agent and the grade / expand / regenerate verification loop.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backends::{BackendSet, ChatMessage, Role};
use crate::error::{Error, Result};
use crate::knowledge::{self, KnowledgeBase, RetrievedContext, DEFAULT_DELTA_K};
use crate::metrics::parse_unit_score;
use crate::pipeline::{self, AnswerDraft, ReasoningState};
use crate::trace::{Session, Stage};

pub const GRADER_SYSTEM_PROMPT: &str = "\
You audit answers given to a vessel operator. Judge the answer against the retrieved rules \
for factual consistency with the rules and logical consistency with the question. \
Reply with a line 'Score: X' where X is a decimal between 0 and 1, then one sentence of rationale.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeResult {
    pub score: f64,
    pub rationale: String,
    pub parse_ok: bool,
}

impl GradeResult {
    fn failed(rationale: impl Into<String>) -> Self {
        Self {
            score: 0.0,
            rationale: rationale.into(),
            parse_ok: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    pub threshold: f64,
    pub max_retries: usize,
    pub delta_k: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            max_retries: 2,
            delta_k: DEFAULT_DELTA_K,
        }
    }
}

impl VerificationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::invalid(format!("threshold must be in (0, 1], got {}", self.threshold)));
        }
        if self.delta_k == 0 {
            return Err(Error::invalid("delta_k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedAnswer {
    pub answer: AnswerDraft,
    pub verified: bool,
    pub retries_used: usize,
    pub score_history: Vec<GradeResult>,
    pub final_context: RetrievedContext,
}

fn grader_request(question: &str, answer_text: &str, context: &RetrievedContext) -> String {
    let mut out = format!("QUESTION\n{}\n\nANSWER\n{}\n\nRETRIEVED RULES\n", question.trim(), answer_text.trim());
    if context.is_empty() {
        out.push_str("(none)\n");
    }
    for hit in &context.hits {
        let label = hit.chunk.section_label.as_deref().unwrap_or(&hit.chunk.source_doc);
        out.push_str(&format!("- {} ({}): {}\n", label, hit.chunk.chunk_id, hit.chunk.text));
    }
    out
}

/// Scores an answer against the retrieved rules. Never fails: unparseable
/// replies and backend errors both grade 0 with `parse_ok = false`.
pub async fn grade(
    question: &str,
    answer_text: &str,
    context: &RetrievedContext,
    backends: &BackendSet,
    session: &Session,
) -> GradeResult {
    if answer_text.trim().is_empty() {
        return GradeResult::failed("empty answer");
    }
    let grader = match backends.client(Role::Grader) {
        Ok(g) => g,
        Err(e) => return GradeResult::failed(e.to_string()),
    };
    let messages = vec![
        ChatMessage::system(GRADER_SYSTEM_PROMPT),
        ChatMessage::user(grader_request(question, answer_text, context)),
    ];
    match grader.chat(messages).await {
        Ok(ex) => {
            session.charge(ex.latency_ms);
            let rationale = ex.response_text.trim().to_string();
            match parse_unit_score(&ex.response_text) {
                Some(score) => GradeResult {
                    score,
                    rationale,
                    parse_ok: true,
                },
                None => GradeResult::failed(rationale),
            }
        }
        Err(e) => {
            session.warn(format!("grader failed: {e}"));
            GradeResult::failed(e.to_string())
        }
    }
}

/// Grades a first answer and, while it falls below the threshold and retries
/// remain, widens retrieval and regenerates. Returns the last answer whether
/// or not it was verified.
pub async fn verify(
    state: ReasoningState,
    kb: &KnowledgeBase,
    config: VerificationConfig,
    backends: &BackendSet,
    session: &Session,
) -> Result<VerifiedAnswer> {
    config.validate()?;
    let ReasoningState {
        path,
        mut context,
        query,
        draft,
    } = state;
    let mut answer = draft;
    let mut rules = context.rules.clone().unwrap_or(RetrievedContext {
        hits: Vec::new(),
        requested_k: 0,
    });
    let mut n = 0;
    let mut verified = false;
    let mut history = Vec::new();

    while n < config.max_retries && !verified {
        let g = grade(&context.question, &answer.final_text, &rules, backends, session).await;
        session.record(
            Stage::Grade,
            0,
            json!({ "attempt": n, "score": g.score, "parse_ok": g.parse_ok, "rationale": g.rationale, "threshold": config.threshold }),
        );
        let passed = g.score >= config.threshold;
        history.push(g);
        if passed {
            verified = true;
        } else {
            let before = rules.len();
            let widened = knowledge::expand(kb, &query, &rules, config.delta_k, backends.client(Role::Embedder)?).await?;
            session.charge(widened.latency_ms);
            rules = widened.context;
            let mut data = pipeline::retrieval_data(&query, &rules, session);
            data["delta_k"] = json!(config.delta_k);
            data["added"] = json!(rules.len() - before);
            session.record(Stage::Expand, widened.latency_ms, data);
            context.rules = Some(rules.clone());
            n += 1;
            answer = pipeline::reason(&context, path, n, backends, session).await?;
        }
    }

    Ok(VerifiedAnswer {
        answer,
        verified,
        retries_used: n,
        score_history: history,
        final_context: rules,
    })
}
