//! Brute-force reference implementations of the text metrics, written
//! independently of the library code.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use helmsman_core::metrics::{stem, TokenizedText, BLEU_EPSILON};

pub fn toks(t: &TokenizedText) -> Vec<String> {
    t.tokens().to_vec()
}

pub fn grams(tokens: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for start in 0..=tokens.len() - n {
            *out.entry(tokens[start..start + n].join("\u{1}")).or_insert(0) += 1;
        }
    }
    out
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn rouge_n(c: &[String], r: &[String], n: usize) -> f64 {
    let cg = grams(c, n);
    let rg = grams(r, n);
    let ct: usize = cg.values().sum();
    let rt: usize = rg.values().sum();
    if ct == 0 || rt == 0 {
        return 0.0;
    }
    let mut overlap = 0;
    for (g, k) in &cg {
        overlap += (*k).min(*rg.get(g).unwrap_or(&0));
    }
    f1(overlap as f64 / ct as f64, overlap as f64 / rt as f64)
}

fn lcs(a: &[String], b: &[String], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let key = (a.len(), b.len());
    if let Some(v) = memo.get(&key) {
        return *v;
    }
    let v = if a[0] == b[0] {
        1 + lcs(&a[1..], &b[1..], memo)
    } else {
        lcs(&a[1..], b, memo).max(lcs(a, &b[1..], memo))
    };
    memo.insert(key, v);
    v
}

pub fn rouge_l(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let l = lcs(c, r, &mut HashMap::new()) as f64;
    f1(l / c.len() as f64, l / r.len() as f64)
}

pub fn bleu(c: &[String], refs: &[Vec<String>], max_n: usize) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let mut logs = Vec::new();
    for n in 1..=max_n {
        let cg = grams(c, n);
        let total: usize = cg.values().sum();
        let mut clipped = 0usize;
        for (g, k) in &cg {
            let best = refs.iter().map(|r| *grams(r, n).get(g).unwrap_or(&0)).max().unwrap_or(0);
            clipped += (*k).min(best);
        }
        let num = if clipped == 0 { BLEU_EPSILON } else { clipped as f64 };
        logs.push((num / total.max(1) as f64).ln());
    }
    let geo = (logs.iter().sum::<f64>() / max_n as f64).exp();
    let mut best: Option<(usize, usize)> = None;
    for r in refs {
        let d = r.len().abs_diff(c.len());
        if best.is_none_or(|(bd, bl)| d < bd || (d == bd && r.len() < bl)) {
            best = Some((d, r.len()));
        }
    }
    let r = best.map_or(0, |b| b.1) as f64;
    let bp = if (c.len() as f64) > r { 1.0 } else { (1.0 - r / c.len() as f64).exp() };
    bp * geo
}

pub fn meteor(c: &[String], r: &[String]) -> f64 {
    let mut taken = BTreeSet::new();
    let mut matched: BTreeMap<usize, usize> = BTreeMap::new();
    for stage in 0..2 {
        for (i, tok) in c.iter().enumerate() {
            if matched.contains_key(&i) {
                continue;
            }
            let hit = r.iter().enumerate().position(|(j, rt)| {
                !taken.contains(&j) && if stage == 0 { rt == tok } else { stem(rt) == stem(tok) }
            });
            if let Some(j) = hit {
                taken.insert(j);
                matched.insert(i, j);
            }
        }
    }
    let m = matched.len();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (&i, &j) in &matched {
        match prev {
            Some((pi, pj)) if pi + 1 == i && pj + 1 == j => {}
            _ => chunks += 1,
        }
        prev = Some((i, j));
    }
    let p = m as f64 / c.len() as f64;
    let rec = m as f64 / r.len() as f64;
    let fmean = 10.0 * p * rec / (rec + 9.0 * p);
    fmean * (1.0 - 0.5 * (chunks as f64 / m as f64).powi(3))
}

/// Classic CIDEr: per order, tf-idf vectors over the union of n-grams,
/// mean cosine against each reference, averaged over orders, times ten.
pub fn cider(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Vec<f64> {
    let docs = cands.len() as f64;
    let mut scores = vec![0.0; cands.len()];
    for n in 1..=4 {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for set in refs {
            let mut seen = BTreeSet::new();
            for r in set {
                seen.extend(grams(r, n).into_keys());
            }
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let vec_of = |t: &[String]| -> BTreeMap<String, f64> {
            grams(t, n)
                .into_iter()
                .map(|(g, tf)| {
                    let d = (*df.get(&g).unwrap_or(&0)).max(1) as f64;
                    (g, tf as f64 * (docs / d).ln())
                })
                .collect()
        };
        for (i, c) in cands.iter().enumerate() {
            if refs[i].is_empty() {
                continue;
            }
            let cv = vec_of(c);
            let mut acc = 0.0;
            for r in &refs[i] {
                let rv = vec_of(r);
                let keys: BTreeSet<&String> = cv.keys().chain(rv.keys()).collect();
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for k in keys {
                    let a = cv.get(k).copied().unwrap_or(0.0);
                    let b = rv.get(k).copied().unwrap_or(0.0);
                    dot += a * b;
                    na += a * a;
                    nb += b * b;
                }
                if na > 0.0 && nb > 0.0 {
                    acc += dot / (na.sqrt() * nb.sqrt());
                }
            }
            scores[i] += acc / refs[i].len() as f64;
        }
    }
    scores.iter().map(|s| s / 4.0 * 10.0).collect()
}
