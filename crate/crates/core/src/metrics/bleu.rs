use std::collections::HashMap;

use super::{ngram_counts, TokenizedText};
use crate::error::{Error, Result};

/// Replaces a zero clipped count so the geometric mean stays defined.
pub const BLEU_EPSILON: f64 = 1e-9;

/// Sentence BLEU with uniform weights over orders `1..=max_n`.
pub fn bleu(candidate: &TokenizedText, references: &[TokenizedText], max_n: usize) -> Result<f64> {
    if !(1..=4).contains(&max_n) {
        return Err(Error::invalid(format!("BLEU order must be 1..=4, got {max_n}")));
    }
    if references.is_empty() {
        return Err(Error::invalid("BLEU needs at least one reference"));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }

    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate.tokens(), n);
        let total: usize = cand.values().sum();
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in references {
            for (gram, count) in ngram_counts(r.tokens(), n) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        let clipped: usize = cand
            .iter()
            .map(|(gram, &c)| c.min(max_ref.get(gram).copied().unwrap_or(0)))
            .sum();
        let numerator = if clipped == 0 { BLEU_EPSILON } else { clipped as f64 };
        log_sum += (numerator / total.max(1) as f64).ln();
    }
    let precision = (log_sum / max_n as f64).exp();

    let c = candidate.len() as f64;
    // closest reference length, shorter one on ties
    let r = references
        .iter()
        .map(TokenizedText::len)
        .min_by_key(|&len| ((len as i64 - candidate.len() as i64).abs(), len))
        .unwrap_or(0) as f64;
    let brevity = (1.0 - r / c).exp().min(1.0);
    Ok(brevity * precision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    #[test]
    fn identity_is_one_for_every_order() {
        let t = tokenize("give way to the vessel on your starboard side");
        for n in 1..=4 {
            assert_eq!(bleu(&t, std::slice::from_ref(&t), n).unwrap(), 1.0);
        }
    }

    #[test]
    fn brevity_penalty_by_hand() {
        let v = bleu(&tokenize("the boat"), &[tokenize("the boat turns")], 1).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_epsilon_dominated() {
        let v = bleu(&tokenize("alpha beta"), &[tokenize("gamma delta")], 2).unwrap();
        assert!(v < 1e-8);
    }

    #[test]
    fn closest_reference_length_wins() {
        // refs of length 2 and 6; candidate length 3 → r = 2, BP = 1
        let v = bleu(&tokenize("a b c"), &[tokenize("a b"), tokenize("a b c d e f")], 1).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn argument_errors() {
        let t = tokenize("x");
        assert!(bleu(&t, std::slice::from_ref(&t), 0).is_err());
        assert!(bleu(&t, std::slice::from_ref(&t), 5).is_err());
        assert!(bleu(&t, &[], 1).is_err());
        assert_eq!(bleu(&tokenize(""), &[t], 1).unwrap(), 0.0);
    }
}
