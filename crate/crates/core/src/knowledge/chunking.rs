//! Splitting regulation documents into rule chunks.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingConfig {
    pub max_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            max_chars: 1200,
            overlap_chars: 120,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_chars == 0 || self.overlap_chars >= self.max_chars {
            return Err(Error::invalid(format!(
                "chunking needs max_chars > overlap_chars >= 0 (got {} and {})",
                self.max_chars, self.overlap_chars
            )));
        }
        Ok(())
    }
}

/// A paragraph-or-smaller piece of a document, before embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub section_label: Option<String>,
    pub text: String,
}

fn rule_label(text: &str) -> Option<String> {
    static RULE: OnceLock<Regex> = OnceLock::new();
    let re = RULE.get_or_init(|| {
        Regex::new(r"^(?:Rule|Section|Article|Annex|Part)\s+[0-9IVXLC]+(?:\([a-z0-9]+\))?").expect("static regex")
    });
    re.find(text).map(|m| m.as_str().to_string())
}

fn heading(line: &str) -> Option<&str> {
    let t = line.trim_start();
    t.starts_with('#').then(|| t.trim_start_matches('#').trim())
}

/// Splits a document on blank lines. Markdown heading lines become the
/// section label of the paragraphs after them; paragraphs opening with
/// "Rule N" and the like are labeled by that prefix when no heading applies.
pub fn paragraphs(text: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut current_heading: Option<String> = None;
    let normalized = text.replace("\r\n", "\n");
    let mut block: Vec<&str> = Vec::new();

    let mut flush = |block: &mut Vec<&str>, out: &mut Vec<Piece>| {
        if block.is_empty() {
            return;
        }
        let mut body_start = 0;
        while body_start < block.len() {
            match heading(block[body_start]) {
                Some(h) => {
                    current_heading = (!h.is_empty()).then(|| h.to_string());
                    body_start += 1;
                }
                None => break,
            }
        }
        let body = block[body_start..].join("\n");
        let body = body.trim();
        if !body.is_empty() {
            out.push(Piece {
                section_label: current_heading.clone().or_else(|| rule_label(body)),
                text: body.to_string(),
            });
        }
        block.clear();
    };

    for line in normalized.lines() {
        if line.trim().is_empty() {
            flush(&mut block, &mut out);
        } else {
            block.push(line);
        }
    }
    flush(&mut block, &mut out);
    out
}

/// Positions just past a sentence terminator that is followed by whitespace.
fn sentence_ends(chars: &[char]) -> Vec<usize> {
    (0..chars.len())
        .filter(|&i| matches!(chars[i], '.' | '!' | '?' | ';') && chars.get(i + 1).is_none_or(|c| c.is_whitespace()))
        .map(|i| i + 1)
        .collect()
}

/// Splits text longer than `max_chars` into windows of at most `max_chars`
/// characters. Each window ends at the last sentence boundary that fits, or is
/// cut hard when none does; the next window starts `overlap_chars` before
/// the previous one ended.
pub fn split_long(text: &str, cfg: ChunkingConfig) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= cfg.max_chars {
        return vec![text.to_string()];
    }
    let ends = sentence_ends(&chars);
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        if chars.len() - start <= cfg.max_chars {
            push_trimmed(&mut out, &chars[start..]);
            break;
        }
        let limit = start + cfg.max_chars;
        let end = ends
            .iter()
            .rev()
            .copied()
            .find(|&e| e <= limit && e > start + cfg.overlap_chars)
            .unwrap_or(limit);
        push_trimmed(&mut out, &chars[start..end]);
        start = end - cfg.overlap_chars;
    }
    out
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

/// All chunk pieces of one document, in order.
pub fn chunk_document(text: &str, cfg: ChunkingConfig) -> Vec<Piece> {
    paragraphs(text)
        .into_iter()
        .flat_map(|p| {
            let label = p.section_label;
            split_long(&p.text, cfg).into_iter().map(move |text| Piece {
                section_label: label.clone(),
                text,
            })
        })
        .collect()
}
