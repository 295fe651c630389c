//! End-to-end question answering over shared backends and a knowledge base.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ats::FrameManifest;
use crate::backends::{BackendSet, Role};
use crate::error::Result;
use crate::knowledge::{KnowledgeBase, RetrievalHit};
use crate::pipeline::{self, AnswerDraft, DispatchConfig};
use crate::router::{self, RouteDecision, RoutePath};
use crate::trace::{Session, Stage};
use crate::verification::{self, GradeResult, VerificationConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub dispatch: DispatchConfig,
    pub verification: VerificationConfig,
    /// Routes whose answers go through the verification loop.
    pub verify_paths: BTreeSet<RoutePath>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            dispatch: DispatchConfig::default(),
            verification: VerificationConfig::default(),
            verify_paths: BTreeSet::from([RoutePath::ComplexReasoning]),
        }
    }
}

/// Per-question knobs for callers that know better than the router.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AskOverrides {
    pub route: Option<RoutePath>,
    pub verify: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskOutcome {
    pub answer: String,
    pub route: RouteDecision,
    /// `None` when verification did not run for this route.
    pub verified: Option<bool>,
    pub retries: usize,
    pub score_history: Vec<GradeResult>,
    pub draft: AnswerDraft,
    pub caption: Option<String>,
    pub hits: Vec<RetrievalHit>,
    /// Time spent on this question; sessions can outlive one question.
    pub latency_ms: u64,
    pub trace_degraded: bool,
}

#[derive(Clone)]
pub struct Engine {
    backends: Arc<BackendSet>,
    kb: Arc<KnowledgeBase>,
    config: EngineConfig,
}

impl Engine {
    pub fn new(backends: Arc<BackendSet>, kb: Arc<KnowledgeBase>, config: EngineConfig) -> Self {
        Self { backends, kb, config }
    }

    pub fn with_kb(&self, kb: Arc<KnowledgeBase>) -> Self {
        Self { kb, ..self.clone() }
    }

    pub fn backends(&self) -> &BackendSet {
        &self.backends
    }

    pub fn kb(&self) -> &Arc<KnowledgeBase> {
        &self.kb
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Routes, dispatches, optionally verifies, and summarizes one question.
    /// Failures are also written to the trace.
    pub async fn answer(
        &self,
        session: &Session,
        question: &str,
        manifest: Option<&FrameManifest>,
        overrides: AskOverrides,
    ) -> Result<AskOutcome> {
        let start = session.elapsed_ms();
        let result = self.answer_inner(session, question, manifest, overrides).await;
        if let Err(e) = &result {
            session.record(
                Stage::Error,
                0,
                json!({ "message": e.to_string(), "role": e.failed_role().map(Role::as_str) }),
            );
        }
        result.map(|mut out| {
            out.latency_ms = session.elapsed_ms().saturating_sub(start);
            out
        })
    }

    async fn answer_inner(
        &self,
        session: &Session,
        question: &str,
        manifest: Option<&FrameManifest>,
        overrides: AskOverrides,
    ) -> Result<AskOutcome> {
        let decision = match overrides.route {
            Some(path) => {
                let d = RouteDecision {
                    path,
                    raw_label: String::new(),
                    used_fallback: false,
                };
                session.record(Stage::Route, 0, json!({ "path": path, "forced": true }));
                d
            }
            None => {
                let out = router::route(question, self.backends.client(Role::Router)?).await;
                session.charge(out.latency_ms);
                if let Some(reason) = &out.fallback_reason {
                    session.warn(format!("router fallback: {reason}"));
                }
                session.record(
                    Stage::Route,
                    out.latency_ms,
                    json!({
                        "path": out.decision.path,
                        "raw_label": out.decision.raw_label,
                        "used_fallback": out.decision.used_fallback,
                    }),
                );
                out.decision
            }
        };
        let path = decision.path;
        let state = pipeline::dispatch(path, question, manifest, &self.kb, self.config.dispatch, &self.backends, session).await?;
        let caption = state.context.caption.as_ref().map(|c| c.text.clone());

        let verify = overrides.verify.unwrap_or_else(|| self.config.verify_paths.contains(&path));
        let (draft, verified, retries, score_history, hits) = if verify {
            let v = verification::verify(state, &self.kb, self.config.verification, &self.backends, session)
                .await
                .map_err(|source| crate::Error::Branch {
                    path,
                    source: Box::new(source),
                })?;
            (v.answer, Some(v.verified), v.retries_used, v.score_history, v.final_context.hits)
        } else {
            let hits = state.context.rules.map(|r| r.hits).unwrap_or_default();
            (state.draft, None, 0, Vec::new(), hits)
        };

        let answer = pipeline::summarize(&draft, question, &self.backends, session).await;
        Ok(AskOutcome {
            answer,
            route: decision,
            verified,
            retries,
            score_history,
            draft,
            caption,
            hits,
            latency_ms: 0,
            trace_degraded: session.trace_degraded(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ats::FrameManifest;
    use crate::backends::{EmbeddingVector, MockBackend, MockFailure, MockRule, MockScript};
    use crate::knowledge::RuleChunk;
    use crate::trace::{ClockMode, MemorySink};

    fn kb() -> Arc<KnowledgeBase> {
        let chunks = (0..6)
            .map(|i| RuleChunk {
                chunk_id: format!("k#{i:04}"),
                source_doc: "k".into(),
                section_label: None,
                text: format!("rule {i}"),
            })
            .collect();
        let emb = (0..6)
            .map(|i| EmbeddingVector::normalized(vec![1.0, i as f64]).unwrap())
            .collect();
        Arc::new(KnowledgeBase::from_parts("e", chunks, emb).unwrap())
    }

    fn engine(script: MockScript) -> (Engine, Arc<MockBackend>) {
        let mock = Arc::new(MockBackend::new(script.hashed_embeddings(2)));
        let set = Arc::new(BackendSet::all_mock(mock.clone(), &Role::ALL));
        (Engine::new(set, kb(), EngineConfig::default()), mock)
    }

    fn clip() -> FrameManifest {
        FrameManifest::new("c", (1..=10).map(|i| format!("f{i}.jpg")).collect()).unwrap()
    }

    fn base() -> MockScript {
        MockScript::default()
            .rule(MockRule::text(Role::Router, "boat ahead", &["FastVision"]))
            .rule(MockRule::text(Role::Router, "buoy", &["FastRag"]))
            .default_reply(Role::Router, "ComplexReasoning")
            .default_reply(Role::Captioner, "a ferry crossing")
            .default_reply(Role::Reasoner, "grounding ===ANSWER=== keep clear")
            .default_reply(Role::Grader, "Score: 0.9")
            .default_reply(Role::Summarizer, "Keep clear.")
    }

    #[tokio::test]
    async fn complex_trace_in_stage_order() {
        let (e, _) = engine(base());
        let sink = Arc::new(MemorySink::default());
        let s = Session::new("s", ClockMode::Simulated, sink.clone());
        let out = e.answer(&s, "Predict the risk", Some(&clip()), AskOverrides::default()).await.unwrap();
        assert_eq!(out.route.path, RoutePath::ComplexReasoning);
        assert_eq!(out.verified, Some(true));
        assert_eq!(out.answer, "Keep clear.");
        assert_eq!(out.caption.as_deref(), Some("a ferry crossing"));
        let stages: Vec<Stage> = sink.records().iter().map(|r| r.stage).collect();
        assert_eq!(
            stages,
            [Stage::Route, Stage::Sample, Stage::Caption, Stage::Retrieve, Stage::Reason, Stage::Grade, Stage::Summary]
        );
    }

    #[tokio::test]
    async fn fast_paths_skip_verification_by_default() {
        let (e, _) = engine(base());
        let s = Session::detached("s");
        let out = e.answer(&s, "Is there a boat ahead?", Some(&clip()), AskOverrides::default()).await.unwrap();
        assert_eq!(out.route.path, RoutePath::FastVision);
        assert_eq!(out.verified, None);
        assert!(out.hits.is_empty());

        let out = e
            .answer(&s, "Is there a boat ahead?", Some(&clip()), AskOverrides { verify: Some(true), ..Default::default() })
            .await
            .unwrap();
        assert_eq!(out.verified, Some(true));
    }

    #[tokio::test]
    async fn reasoner_failure_names_the_role() {
        let (e, _) = engine(base().rule(MockRule::failing(Role::Reasoner, "", MockFailure::Status(500))));
        let sink = Arc::new(MemorySink::default());
        let s = Session::new("s", ClockMode::Wall, sink.clone());
        let err = e.answer(&s, "What does a buoy mean?", None, AskOverrides::default()).await.unwrap_err();
        assert_eq!(err.failed_role(), Some(Role::Reasoner));
        assert_eq!(sink.records().last().unwrap().stage, Stage::Error);
    }
}
