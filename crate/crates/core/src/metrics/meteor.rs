use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

use super::TokenizedText;

/// Porter2 (Snowball English) stem of a lowercase token.
pub fn stem(token: &str) -> String {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER
        .get_or_init(|| Stemmer::create(Algorithm::English))
        .stem(token)
        .into_owned()
}

/// METEOR without the synonym stage.
///
/// Tokens are aligned greedily left to right, first by exact match and then
/// by stem. With `m` aligned pairs, `P = m/|cand|`, `R = m/|ref|`,
/// `F = PR / (0.9P + 0.1R)`, and the fragmentation penalty is
/// `0.5 * (chunks/m)^3`, where a chunk is a maximal run of pairs adjacent in
/// both texts.
pub fn meteor_lite(candidate: &TokenizedText, reference: &TokenizedText) -> f64 {
    let cand = candidate.tokens();
    let refs = reference.tokens();
    let mut ref_used = vec![false; refs.len()];
    let mut alignment: Vec<Option<usize>> = vec![None; cand.len()];

    for (i, tok) in cand.iter().enumerate() {
        if let Some(j) = (0..refs.len()).find(|&j| !ref_used[j] && refs[j] == *tok) {
            ref_used[j] = true;
            alignment[i] = Some(j);
        }
    }
    if alignment.iter().any(Option::is_none) {
        let ref_stems: Vec<String> = refs.iter().map(|t| stem(t)).collect();
        for (i, tok) in cand.iter().enumerate() {
            if alignment[i].is_some() {
                continue;
            }
            let s = stem(tok);
            if let Some(j) = (0..refs.len()).find(|&j| !ref_used[j] && ref_stems[j] == s) {
                ref_used[j] = true;
                alignment[i] = Some(j);
            }
        }
    }

    let pairs: Vec<(usize, usize)> = alignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect();
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();

    let m = m as f64;
    let precision = m / cand.len() as f64;
    let recall = m / refs.len() as f64;
    let f_mean = precision * recall / (0.9 * precision + 0.1 * recall);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}
