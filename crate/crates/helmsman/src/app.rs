//! Wiring a configuration into backends, a knowledge base and trace sinks.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use helmsman_core::backends::{BackendProfile, BackendSet, HttpBackend, MockBackend, MockScript, Role};
use helmsman_core::config::SystemConfig;
use helmsman_core::knowledge::{load_corpus_dir, KnowledgeBase};
use helmsman_core::trace::{ClockMode, JsonlSink, NullSink, TraceSink};
use helmsman_core::{Error, Result};

/// Everything the commands share.
pub struct Runtime {
    pub config: SystemConfig,
    pub backends: Arc<BackendSet>,
    /// Set when backends are scripted mocks; mock runs use the simulated clock.
    pub mock: Option<Arc<MockBackend>>,
}

impl Runtime {
    pub fn clock(&self) -> ClockMode {
        if self.mock.is_some() {
            ClockMode::Simulated
        } else {
            ClockMode::Wall
        }
    }
}

fn mentions_judge(script: &MockScript) -> bool {
    script.defaults.contains_key(&Role::Judge) || script.rules.iter().any(|r| r.role == Some(Role::Judge))
}

/// Builds the backend set. With a mock script every role is served by the
/// script and no HTTP client is created.
pub fn build_runtime(config: SystemConfig, mock_script: Option<&Path>) -> Result<Runtime> {
    match mock_script {
        Some(path) => {
            let script = MockScript::load(path)?;
            let judge = mentions_judge(&script) || config.backends.contains_key(&Role::Judge);
            let mock = Arc::new(MockBackend::try_new(script)?);
            let mut set = BackendSet::new();
            for role in Role::ALL {
                if role == Role::Judge && !judge {
                    continue;
                }
                let profile = config
                    .backends
                    .get(&role)
                    .cloned()
                    .unwrap_or_else(|| BackendProfile::mock(role));
                set.insert(profile, mock.clone());
            }
            Ok(Runtime {
                config,
                backends: Arc::new(set),
                mock: Some(mock),
            })
        }
        None => {
            let missing = config.missing_roles();
            if !missing.is_empty() {
                let names: Vec<&str> = missing.iter().map(|r| r.as_str()).collect();
                return Err(Error::invalid(format!(
                    "no backend profile for: {} (add [backends.<role>] sections or pass --mock-script)",
                    names.join(", ")
                )));
            }
            let http = Arc::new(HttpBackend::new());
            let mut set = BackendSet::new();
            for profile in config.backends.values() {
                set.insert(profile.clone(), http.clone());
            }
            Ok(Runtime {
                config,
                backends: Arc::new(set),
                mock: None,
            })
        }
    }
}

/// Loads the saved knowledge base, or ingests the corpus directory when no
/// saved one exists yet (saving it when a path is configured).
pub async fn load_kb(runtime: &Runtime) -> Result<KnowledgeBase> {
    let rag = &runtime.config.rag;
    if let Some(path) = rag.kb_path.as_ref().filter(|p| p.exists()) {
        let kb = KnowledgeBase::load(path)?;
        if let Some(embedder) = runtime.backends.get(Role::Embedder) {
            if runtime.mock.is_none() && kb.embedder_id() != embedder.profile().model_id {
                tracing::warn!(
                    "knowledge base was embedded with {:?} but the embedder is {:?}",
                    kb.embedder_id(),
                    embedder.profile().model_id
                );
            }
        }
        return Ok(kb);
    }
    let Some(dir) = &rag.corpus_dir else {
        return Err(match &rag.kb_path {
            Some(p) => Error::invalid(format!("knowledge base {} does not exist and no corpus_dir is configured", p.display())),
            None => Error::invalid("configure rag.kb_path or rag.corpus_dir"),
        });
    };
    let docs = load_corpus_dir(dir)?;
    let kb = KnowledgeBase::ingest(&docs, rag.chunking, runtime.backends.client(Role::Embedder)?).await?;
    if let Some(path) = &rag.kb_path {
        kb.save(path)?;
    }
    Ok(kb)
}

pub fn trace_sink(path: Option<&PathBuf>) -> Result<Arc<dyn TraceSink>> {
    Ok(match path {
        Some(p) => Arc::new(JsonlSink::open(p)?),
        None => Arc::new(NullSink),
    })
}

/// Process exit status for an error: 2 when a model backend is at fault, else 1.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_backend() {
        2
    } else {
        1
    }
}
