//! System configuration, read from TOML.
//!
//! ```toml
//! [backends.reasoner]
//! endpoint = "http://127.0.0.1:8000/v1"
//! model_id = "reasoner-14b"
//!
//! [ats]
//! target_k = 8
//!
//! [rag]
//! top_k = 4
//! delta_k = 4
//! kb_path = "kb.json"
//!
//! [verification]
//! threshold = 0.7
//! max_retries = 2
//! enabled_paths = ["ComplexReasoning"]
//! ```
//!
//! Relative paths resolve against the config file's directory. Endpoints
//! and model ids can be overridden with `HELMSMAN_<ROLE>_ENDPOINT` and
//! `HELMSMAN_<ROLE>_MODEL`; the bind address with `HELMSMAN_BIND`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ats::DEFAULT_TARGET_K;
use crate::backends::{BackendProfile, Role};
use crate::engine::EngineConfig;
use crate::error::{Error, Result, ValidationIssue};
use crate::knowledge::{ChunkingConfig, DEFAULT_DELTA_K, DEFAULT_TOP_K};
use crate::pipeline::DispatchConfig;
use crate::router::RoutePath;
use crate::verification::VerificationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtsSection {
    pub target_k: usize,
}

impl Default for AtsSection {
    fn default() -> Self {
        Self {
            target_k: DEFAULT_TARGET_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RagSection {
    pub top_k: usize,
    pub delta_k: usize,
    /// A saved knowledge base.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kb_path: Option<PathBuf>,
    /// Regulation documents to ingest when no saved knowledge base exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_dir: Option<PathBuf>,
    pub chunking: ChunkingConfig,
}

impl Default for RagSection {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            delta_k: DEFAULT_DELTA_K,
            kb_path: None,
            corpus_dir: None,
            chunking: ChunkingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationSection {
    pub threshold: f64,
    pub max_retries: usize,
    pub enabled_paths: BTreeSet<RoutePath>,
}

impl Default for VerificationSection {
    fn default() -> Self {
        let v = VerificationConfig::default();
        Self {
            threshold: v.threshold,
            max_retries: v.max_retries,
            enabled_paths: BTreeSet::from([RoutePath::ComplexReasoning]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    /// Dataset manifest whose clips can be opened by id.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clips: Option<PathBuf>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            clips: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Store whole prompts instead of digests.
    pub full: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub concurrency: usize,
    pub judge: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            concurrency: 4,
            judge: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub backends: BTreeMap<Role, BackendProfile>,
    pub ats: AtsSection,
    pub rag: RagSection,
    pub verification: VerificationSection,
    pub service: ServiceSection,
    pub trace: TraceSection,
    pub eval: EvalSection,
}

fn resolve(base: Option<&Path>, p: &mut Option<PathBuf>) {
    if let (Some(base), Some(path)) = (base, p.as_mut()) {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl SystemConfig {
    /// Reads a config file, applies environment overrides and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path.parent())?;
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses TOML; relative paths resolve against `base` when given.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: SystemConfig =
            toml::from_str(text).map_err(|e| Error::Validation(vec![ValidationIssue::new("config", e.to_string())]))?;
        for (role, profile) in cfg.backends.iter_mut() {
            profile.role = *role;
        }
        resolve(base, &mut cfg.rag.kb_path);
        resolve(base, &mut cfg.rag.corpus_dir);
        resolve(base, &mut cfg.service.clips);
        resolve(base, &mut cfg.trace.path);
        Ok(cfg)
    }

    pub fn render(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidState(format!("cannot render config: {e}")))
    }

    /// Environment overrides. A role absent from the file is added when both
    /// its endpoint and model are given.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        for role in Role::ALL {
            let upper = role.as_str().to_ascii_uppercase();
            let endpoint = var(&format!("HELMSMAN_{upper}_ENDPOINT"));
            let model = var(&format!("HELMSMAN_{upper}_MODEL"));
            match self.backends.get_mut(&role) {
                Some(p) => {
                    if let Some(e) = endpoint {
                        p.endpoint = e;
                    }
                    if let Some(m) = model {
                        p.model_id = m;
                    }
                }
                None => {
                    if let (Some(e), Some(m)) = (endpoint, model) {
                        self.backends.insert(role, BackendProfile::new(role, e, m));
                    }
                }
            }
        }
        if let Some(bind) = var("HELMSMAN_BIND") {
            self.service.bind = bind;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        for (role, p) in &self.backends {
            if let Err(e) = p.validate() {
                issues.push(ValidationIssue::new(format!("backends.{role}"), e.to_string()));
            }
        }
        if self.ats.target_k == 0 {
            issues.push(ValidationIssue::new("ats.target_k", "must be at least 1"));
        }
        if self.rag.top_k == 0 {
            issues.push(ValidationIssue::new("rag.top_k", "must be at least 1"));
        }
        if self.rag.delta_k == 0 {
            issues.push(ValidationIssue::new("rag.delta_k", "must be at least 1"));
        }
        if let Err(e) = self.rag.chunking.validate() {
            issues.push(ValidationIssue::new("rag.chunking", e.to_string()));
        }
        let t = self.verification.threshold;
        if !(t > 0.0 && t <= 1.0) {
            issues.push(ValidationIssue::new("verification.threshold", format!("must be in (0, 1], got {t}")));
        }
        if self.eval.concurrency == 0 {
            issues.push(ValidationIssue::new("eval.concurrency", "must be at least 1"));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }

    /// Roles a question can touch that have no profile.
    pub fn missing_roles(&self) -> Vec<Role> {
        Role::ALL
            .into_iter()
            .filter(|r| *r != Role::Judge && !self.backends.contains_key(r))
            .collect()
    }

    pub fn verification_config(&self) -> VerificationConfig {
        VerificationConfig {
            threshold: self.verification.threshold,
            max_retries: self.verification.max_retries,
            delta_k: self.rag.delta_k,
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            dispatch: DispatchConfig {
                target_k: self.ats.target_k,
                top_k: self.rag.top_k,
            },
            verification: self.verification_config(),
            verify_paths: self.verification.enabled_paths.clone(),
        }
    }
}
