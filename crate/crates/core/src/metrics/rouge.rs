use super::{ngram_counts, TokenizedText};

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// ROUGE-N F1 over clipped n-gram overlap. Zero when either side has no n-grams.
pub fn rouge_n(candidate: &TokenizedText, reference: &TokenizedText, n: usize) -> f64 {
    let cand = ngram_counts(candidate.tokens(), n);
    let refs = ngram_counts(reference.tokens(), n);
    let cand_total: usize = cand.values().sum();
    let ref_total: usize = refs.values().sum();
    if cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let overlap: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    f1(overlap as f64 / cand_total as f64, overlap as f64 / ref_total as f64)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 from the longest common subsequence.
pub fn rouge_l(candidate: &TokenizedText, reference: &TokenizedText) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate.tokens(), reference.tokens()) as f64;
    f1(lcs / candidate.len() as f64, lcs / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    #[test]
    fn hand_counted_unigram_overlap() {
        let c = tokenize("the boat turns");
        let r = tokenize("the boat turns starboard");
        // P = 1, R = 3/4
        assert!((rouge_n(&c, &r, 1) - 6.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn single_token_has_no_bigrams() {
        assert_eq!(rouge_n(&tokenize("boat"), &tokenize("boat"), 2), 0.0);
    }

    #[test]
    fn repeated_tokens_are_clipped() {
        // overlap = min(3,1) = 1 → P = 1/3, R = 1
        let v = rouge_n(&tokenize("the the the"), &tokenize("the"), 1);
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lcs_cases() {
        let v = rouge_l(&tokenize("a c d"), &tokenize("a b c d"));
        assert!((v - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(rouge_l(&tokenize("x y"), &tokenize("p q")), 0.0);
        assert_eq!(rouge_l(&tokenize("p q r"), &tokenize("p q r")), 1.0);
        assert_eq!(rouge_l(&tokenize(""), &tokenize("p")), 0.0);
    }
}
