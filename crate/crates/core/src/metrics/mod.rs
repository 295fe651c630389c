//! Text-generation metrics: ROUGE-1/2/L, BLEU-1..4, METEOR (exact + stem
//! matching only), classic CIDEr, and a rubric-based judge score.
//!
//! Every metric works on [`TokenizedText`]: lowercase, split on whitespace,
//! leading/trailing punctuation stripped from each token.

mod bleu;
mod cider;
mod judge;
mod meteor;
mod rouge;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu, BLEU_EPSILON};
pub use cider::{cider, CiderScores};
pub use judge::{judge_score, parse_unit_score};
pub use meteor::{meteor_lite, stem};
pub use rouge::{rouge_l, rouge_n};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenizedText {
    tokens: Vec<String>,
}

impl TokenizedText {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Self {
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }
}

pub fn tokenize(text: &str) -> TokenizedText {
    let tokens = text
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect();
    TokenizedText { tokens }
}

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Full metric row for one prediction, or an aggregate of many.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub cider: f64,
    /// Absent when no judge was configured or it gave no usable score.
    pub judge_score: Option<f64>,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 10] = [
        "ROUGE-1", "ROUGE-2", "ROUGE-L", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "CIDEr", "Judge",
    ];

    /// Every metric except CIDEr (corpus-level) and the judge (needs a backend).
    pub fn score_pair(candidate: &str, reference: &str) -> MetricReport {
        let c = tokenize(candidate);
        let r = tokenize(reference);
        let refs = std::slice::from_ref(&r);
        let b = |n| bleu(&c, refs, n).unwrap_or(0.0);
        MetricReport {
            rouge1: rouge_n(&c, &r, 1),
            rouge2: rouge_n(&c, &r, 2),
            rouge_l: rouge_l(&c, &r),
            bleu1: b(1),
            bleu2: b(2),
            bleu3: b(3),
            bleu4: b(4),
            meteor: meteor_lite(&c, &r),
            cider: 0.0,
            judge_score: None,
        }
    }

    /// The numeric columns in display order; the judge is `None` when unavailable.
    pub fn values(&self) -> [Option<f64>; 10] {
        [
            Some(self.rouge1),
            Some(self.rouge2),
            Some(self.rouge_l),
            Some(self.bleu1),
            Some(self.bleu2),
            Some(self.bleu3),
            Some(self.bleu4),
            Some(self.meteor),
            Some(self.cider),
            self.judge_score,
        ]
    }

    /// Macro average. The judge mean covers only reports that carry a judge score.
    pub fn mean<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Option<MetricReport> {
        let mut sum = MetricReport::default();
        let mut n = 0usize;
        let mut judge_sum = 0.0;
        let mut judge_n = 0usize;
        for r in reports {
            n += 1;
            sum.rouge1 += r.rouge1;
            sum.rouge2 += r.rouge2;
            sum.rouge_l += r.rouge_l;
            sum.bleu1 += r.bleu1;
            sum.bleu2 += r.bleu2;
            sum.bleu3 += r.bleu3;
            sum.bleu4 += r.bleu4;
            sum.meteor += r.meteor;
            sum.cider += r.cider;
            if let Some(j) = r.judge_score {
                judge_sum += j;
                judge_n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        let d = n as f64;
        Some(MetricReport {
            rouge1: sum.rouge1 / d,
            rouge2: sum.rouge2 / d,
            rouge_l: sum.rouge_l / d,
            bleu1: sum.bleu1 / d,
            bleu2: sum.bleu2 / d,
            bleu3: sum.bleu3 / d,
            bleu4: sum.bleu4 / d,
            meteor: sum.meteor / d,
            cider: sum.cider / d,
            judge_score: (judge_n > 0).then(|| judge_sum / judge_n as f64),
        })
    }
}
