//! Classic CIDEr (no CIDEr-D length penalty or count clipping).

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{ngram_counts, TokenizedText};
use crate::error::{Error, Result};

const MAX_N: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiderScores {
    /// Mean of the per-sample scores.
    pub corpus: f64,
    pub per_sample: Vec<f64>,
}

type Weighted<'a> = BTreeMap<&'a [String], f64>;

fn tfidf<'a>(
    counts: BTreeMap<&'a [String], usize>,
    df: &HashMap<&[String], usize>,
    log_docs: f64,
) -> (Weighted<'a>, f64) {
    let mut norm_sq = 0.0;
    let weighted: Weighted<'a> = counts
        .into_iter()
        .map(|(gram, tf)| {
            // n-grams never seen in any reference get df = 1
            let doc_freq = df.get(gram).copied().unwrap_or(0).max(1) as f64;
            let w = tf as f64 * (log_docs - doc_freq.ln());
            norm_sq += w * w;
            (gram, w)
        })
        .collect();
    (weighted, norm_sq.sqrt())
}

fn cosine(a: &(Weighted<'_>, f64), b: &(Weighted<'_>, f64)) -> f64 {
    if a.1 == 0.0 || b.1 == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.0.iter().map(|(g, w)| w * b.0.get(g).copied().unwrap_or(0.0)).sum();
    dot / (a.1 * b.1)
}

/// Scores each candidate against its reference set. Document frequency counts
/// the reference sets an n-gram occurs in; idf is `ln(|corpus| / df)`. Each
/// order n = 1..4 contributes the mean cosine between the candidate's and each
/// reference's tf-idf vector; orders are averaged and the result scaled by 10.
pub fn cider(candidates: &[TokenizedText], references: &[Vec<TokenizedText>]) -> Result<CiderScores> {
    if candidates.is_empty() {
        return Err(Error::invalid("CIDEr needs at least one candidate"));
    }
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let log_docs = (candidates.len() as f64).ln();

    let mut per_sample = vec![0.0; candidates.len()];
    for n in 1..=MAX_N {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for refs in references {
            let grams: HashSet<&[String]> = refs.iter().flat_map(|r| r.tokens().windows(n)).collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (i, (cand, refs)) in candidates.iter().zip(references).enumerate() {
            if refs.is_empty() {
                continue;
            }
            let c = tfidf(ngram_counts(cand.tokens(), n), &df, log_docs);
            let sum: f64 = refs
                .iter()
                .map(|r| cosine(&c, &tfidf(ngram_counts(r.tokens(), n), &df, log_docs)))
                .sum();
            per_sample[i] += sum / refs.len() as f64;
        }
    }
    for s in &mut per_sample {
        *s = *s / MAX_N as f64 * 10.0;
    }
    let corpus = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(CiderScores { corpus, per_sample })
}
