//! Adaptive temporal standardization: deterministic key-frame selection.
//!
//! A clip of `N` frames is reduced to at most `K` key frames spread uniformly
//! over the clip, always keeping the first and last frame when `K >= 2`:
//!
//! ```text
//! index_k = floor((k - 1) / (K - 1) * (N - 1)) + 1,   k = 1..K
//! ```
//!
//! Indices are 1-based. Duplicates (which appear whenever `K > N`) are dropped.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationIssue};

pub const DEFAULT_TARGET_K: usize = 8;

/// A clip as an ordered list of pre-extracted frame files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub clip_id: String,
    pub frames: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    /// Directory relative frame paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl FrameManifest {
    pub fn new(clip_id: impl Into<String>, frames: Vec<String>) -> Result<Self> {
        let manifest = Self {
            clip_id: clip_id.into(),
            frames,
            duration_s: None,
            fps: None,
            base_dir: None,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Reads a manifest file. Relative frame paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: FrameManifest = serde_json::from_str(&raw)?;
        manifest.base_dir = path.parent().map(Path::to_path_buf);
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues("clip");
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }

    /// Collects invariant violations, prefixing field names with `at`.
    pub fn issues(&self, at: &str) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        if self.clip_id.trim().is_empty() {
            issues.push(ValidationIssue::new(format!("{at}.clip_id"), "must be non-empty"));
        }
        if self.frames.is_empty() {
            issues.push(ValidationIssue::new(
                format!("{at}.frames"),
                "a clip needs at least one frame",
            ));
        }
        let mut seen = HashSet::new();
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.trim().is_empty() {
                issues.push(ValidationIssue::new(format!("{at}.frames[{i}]"), "empty frame reference"));
            } else if !seen.insert(frame.as_str()) {
                issues.push(ValidationIssue::new(
                    format!("{at}.frames[{i}]"),
                    format!("duplicate frame reference {frame:?}"),
                ));
            }
        }
        if let Some(d) = self.duration_s {
            if !(d.is_finite() && d >= 0.0) {
                issues.push(ValidationIssue::new(format!("{at}.duration_s"), "must be a non-negative number"));
            }
        }
        if let Some(fps) = self.fps {
            if !(fps.is_finite() && fps > 0.0) {
                issues.push(ValidationIssue::new(format!("{at}.fps"), "must be positive"));
            }
        }
        issues
    }

    /// Clip length in seconds, from `duration_s` or derived from `fps`.
    pub fn duration(&self) -> Option<f64> {
        self.duration_s
            .or_else(|| self.fps.map(|fps| self.frames.len() as f64 / fps))
    }

    /// Filesystem location of a frame reference.
    pub fn resolve(&self, frame: &str) -> PathBuf {
        let p = Path::new(frame);
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Selected key-frame positions (1-based, strictly increasing).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameIndexSet {
    pub indices: Vec<usize>,
    pub requested_k: usize,
}

impl FrameIndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// A frame picked by [`sample`], with its 1-based position in the clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledFrame {
    pub position: usize,
    pub reference: String,
    /// `reference` resolved against the manifest's directory.
    #[serde(skip)]
    pub path: PathBuf,
}

pub fn standardize(frame_count: usize, target_k: usize) -> Result<FrameIndexSet> {
    if frame_count == 0 {
        return Err(Error::invalid("frame count must be at least 1"));
    }
    if target_k == 0 {
        return Err(Error::invalid("target key-frame count must be at least 1"));
    }
    if target_k == 1 {
        return Ok(FrameIndexSet {
            indices: vec![1],
            requested_k: 1,
        });
    }

    let span = (frame_count - 1) as u128;
    let steps = (target_k - 1) as u128;
    let mut indices: Vec<usize> = Vec::with_capacity(target_k.min(frame_count));
    for k in 0..target_k as u128 {
        // exact floor in integer arithmetic
        let idx = (k * span / steps) as usize + 1;
        // raw indices are non-decreasing, so order-preserving dedup is a tail check
        if indices.last() != Some(&idx) {
            indices.push(idx);
        }
    }
    Ok(FrameIndexSet {
        indices,
        requested_k: target_k,
    })
}

/// Picks the key frames of a clip in temporal order.
pub fn sample(manifest: &FrameManifest, target_k: usize) -> Result<Vec<SampledFrame>> {
    let selection = standardize(manifest.frame_count(), target_k)?;
    Ok(selection
        .indices
        .iter()
        .map(|&position| SampledFrame {
            position,
            reference: manifest.frames[position - 1].clone(),
            path: manifest.resolve(&manifest.frames[position - 1]),
        })
        .collect())
}
