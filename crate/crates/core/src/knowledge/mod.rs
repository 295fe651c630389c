//! Regulation knowledge base and exact dense retrieval.
//!
//! Chunks are embedded once at ingest; queries are scored against every chunk
//! by cosine similarity (an exhaustive scan, no approximate index). Results are
//! ordered by descending score with ties broken by ascending `chunk_id`, so the
//! same query always yields the same hit list.

pub mod chunking;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{EmbeddingVector, RoleClient};
use crate::error::{Error, Result, ValidationIssue};

pub use chunking::ChunkingConfig;

pub const DEFAULT_TOP_K: usize = 4;
pub const DEFAULT_DELTA_K: usize = 4;

const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleChunk {
    pub chunk_id: String,
    pub source_doc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section_label: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub name: String,
    pub text: String,
}

/// Immutable set of embedded rule chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    embedder_id: String,
    chunks: Vec<RuleChunk>,
    embeddings: Vec<EmbeddingVector>,
}

#[derive(Serialize, Deserialize)]
struct StoredChunk {
    #[serde(flatten)]
    chunk: RuleChunk,
    embedding: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoredKnowledgeBase {
    embedder_id: String,
    dimension: usize,
    chunks: Vec<StoredChunk>,
}

impl KnowledgeBase {
    pub fn from_parts(
        embedder_id: impl Into<String>,
        chunks: Vec<RuleChunk>,
        embeddings: Vec<EmbeddingVector>,
    ) -> Result<Self> {
        let kb = Self {
            embedder_id: embedder_id.into(),
            chunks,
            embeddings,
        };
        let issues = kb.issues();
        if issues.is_empty() {
            Ok(kb)
        } else {
            Err(Error::Validation(issues))
        }
    }

    fn issues(&self) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        if self.chunks.is_empty() {
            issues.push(ValidationIssue::new("chunks", "knowledge base is empty"));
        }
        if self.chunks.len() != self.embeddings.len() {
            issues.push(ValidationIssue::new(
                "embeddings",
                format!("{} chunks but {} embeddings", self.chunks.len(), self.embeddings.len()),
            ));
        }
        let dim = self.embeddings.first().map(EmbeddingVector::dim).unwrap_or(0);
        let mut ids = HashSet::new();
        for (i, c) in self.chunks.iter().enumerate() {
            if !ids.insert(c.chunk_id.as_str()) {
                issues.push(ValidationIssue::new(
                    format!("chunks[{i}].chunk_id"),
                    format!("duplicate chunk id {:?}", c.chunk_id),
                ));
            }
            if c.text.trim().is_empty() {
                issues.push(ValidationIssue::new(format!("chunks[{i}].text"), "empty chunk text"));
            }
        }
        for (i, e) in self.embeddings.iter().enumerate() {
            if e.dim() != dim {
                issues.push(ValidationIssue::new(
                    format!("chunks[{i}].embedding"),
                    format!("dimension {} differs from {dim}", e.dim()),
                ));
            }
        }
        issues
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.embeddings.first().map(EmbeddingVector::dim).unwrap_or(0)
    }

    pub fn chunks(&self) -> &[RuleChunk] {
        &self.chunks
    }

    pub fn embeddings(&self) -> &[EmbeddingVector] {
        &self.embeddings
    }

    /// Splits, embeds and indexes a corpus.
    pub async fn ingest(documents: &[SourceDocument], chunking: ChunkingConfig, embedder: &RoleClient) -> Result<Self> {
        chunking.validate()?;
        if documents.iter().all(|d| d.text.trim().is_empty()) {
            return Err(Error::invalid("corpus has no non-empty document"));
        }
        let mut names = HashSet::new();
        if let Some(dup) = documents.iter().find(|d| !names.insert(d.name.as_str())) {
            return Err(Error::invalid(format!("duplicate document name {:?}", dup.name)));
        }

        let mut chunks = Vec::new();
        for doc in documents {
            for (seq, piece) in chunking::chunk_document(&doc.text, chunking).into_iter().enumerate() {
                chunks.push(RuleChunk {
                    chunk_id: format!("{}#{:04}", doc.name, seq + 1),
                    source_doc: doc.name.clone(),
                    section_label: piece.section_label,
                    text: piece.text,
                });
            }
        }

        let mut embeddings = Vec::with_capacity(chunks.len());
        for batch in chunks.chunks(EMBED_BATCH) {
            let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
            embeddings.extend(embedder.embed(&texts).await?.vectors);
        }
        Self::from_parts(embedder.profile().model_id.clone(), chunks, embeddings)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stored: StoredKnowledgeBase = serde_json::from_str(&raw)?;
        let mut issues = Vec::new();
        let mut chunks = Vec::with_capacity(stored.chunks.len());
        let mut embeddings = Vec::with_capacity(stored.chunks.len());
        for (i, s) in stored.chunks.into_iter().enumerate() {
            if s.embedding.len() != stored.dimension {
                issues.push(ValidationIssue::new(
                    format!("chunks[{i}].embedding"),
                    format!("expected dimension {}, found {}", stored.dimension, s.embedding.len()),
                ));
            }
            match EmbeddingVector::from_unit(s.embedding) {
                Some(e) => embeddings.push(e),
                None => issues.push(ValidationIssue::new(format!("chunks[{i}].embedding"), "not unit length")),
            }
            chunks.push(s.chunk);
        }
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        Self::from_parts(stored.embedder_id, chunks, embeddings)
    }

    pub fn to_json(&self) -> Result<String> {
        let stored = StoredKnowledgeBase {
            embedder_id: self.embedder_id.clone(),
            dimension: self.dimension(),
            chunks: self
                .chunks
                .iter()
                .zip(&self.embeddings)
                .map(|(c, e)| StoredChunk {
                    chunk: c.clone(),
                    embedding: e.values().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&stored)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    /// Top-`top_k` chunks for an already-embedded query.
    pub fn search(&self, query: &EmbeddingVector, top_k: usize) -> Result<RetrievedContext> {
        if top_k == 0 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        if query.dim() != self.dimension() {
            return Err(Error::InvalidState(format!(
                "query dimension {} does not match knowledge base dimension {}",
                query.dim(),
                self.dimension()
            )));
        }
        let mut scored: Vec<(usize, f64)> = self
            .embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| (i, query.cosine(e)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.chunks[a.0].chunk_id.cmp(&self.chunks[b.0].chunk_id))
        });
        scored.truncate(top_k);
        Ok(RetrievedContext {
            hits: scored
                .into_iter()
                .map(|(i, score)| RetrievalHit {
                    chunk: self.chunks[i].clone(),
                    score,
                })
                .collect(),
            requested_k: top_k,
        })
    }
}

/// Reads every `.md` / `.txt` file of a directory, sorted by file name.
/// Documents are named by file stem.
pub fn load_corpus_dir(dir: impl AsRef<Path>) -> Result<Vec<SourceDocument>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "md" | "txt" | "markdown"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no .md or .txt files in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("doc").to_string();
            Ok(SourceDocument { name, text })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk: RuleChunk,
    pub score: f64,
}

/// Ranked rule chunks handed to the reasoner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub hits: Vec<RetrievalHit>,
    pub requested_k: usize,
}

impl RetrievedContext {
    pub fn chunk_ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.chunk.chunk_id.as_str()).collect()
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.hits.iter().any(|h| h.chunk.chunk_id == chunk_id)
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    /// Union by chunk id, re-ranked. Scores from `newer` win for shared chunks.
    pub fn union(&self, newer: RetrievedContext) -> RetrievedContext {
        let requested_k = self.requested_k.max(newer.requested_k);
        let mut hits = newer.hits;
        let known: HashSet<String> = hits.iter().map(|h| h.chunk.chunk_id.clone()).collect();
        hits.extend(self.hits.iter().filter(|h| !known.contains(&h.chunk.chunk_id)).cloned());
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk.chunk_id.cmp(&b.chunk.chunk_id)));
        RetrievedContext { hits, requested_k }
    }
}

/// Retrieval query text: the question, followed by the scene caption when one exists.
pub fn build_query(question: &str, caption: Option<&str>) -> Result<String> {
    if question.trim().is_empty() {
        return Err(Error::invalid("question is empty"));
    }
    Ok(match caption.map(str::trim).filter(|c| !c.is_empty()) {
        Some(c) => format!("{question}\n{c}"),
        None => question.to_string(),
    })
}

/// A retrieval result plus the time spent embedding the query.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub context: RetrievedContext,
    pub latency_ms: u64,
}

pub async fn retrieve(kb: &KnowledgeBase, query_text: &str, top_k: usize, embedder: &RoleClient) -> Result<Retrieval> {
    if top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    if kb.is_empty() {
        return Err(Error::InvalidState("knowledge base is empty".into()));
    }
    let batch = embedder.embed(&[query_text.to_string()]).await?;
    let query = batch
        .vectors
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidState("embedder returned no vector".into()))?;
    Ok(Retrieval {
        context: kb.search(&query, top_k)?,
        latency_ms: batch.latency_ms,
    })
}

/// Widens `existing` by `delta_k` more chunks for the same query.
pub async fn expand(
    kb: &KnowledgeBase,
    query_text: &str,
    existing: &RetrievedContext,
    delta_k: usize,
    embedder: &RoleClient,
) -> Result<Retrieval> {
    if delta_k == 0 {
        return Err(Error::invalid("delta_k must be at least 1"));
    }
    let wider = retrieve(kb, query_text, existing.requested_k + delta_k, embedder).await?;
    Ok(Retrieval {
        context: existing.union(wider.context),
        latency_ms: wider.latency_ms,
    })
}
