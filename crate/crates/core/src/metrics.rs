//! Corpus-level text metrics over tokenized candidates and single
//! references: BLEU (n-gram precision, geometric mean, brevity penalty),
//! ROUGE-L (LCS F-measure), CIDEr (tf-idf n-gram cosine), and distinct-n.
//! Golden values in the tests were produced once by an independent
//! implementation and committed.
//!
//! N-gram tallies use ordered maps so every floating-point accumulation
//! happens in a fixed key order: reported values are bit-identical across
//! runs and platforms, which the end-to-end determinism check relies on.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};

fn check_pairs(cands: &[Vec<String>], refs: &[Vec<String>]) -> Result<()> {
    if cands.is_empty() {
        return Err(Error::EmptyDataset("metric candidates"));
    }
    if cands.len() != refs.len() {
        return Err(Error::LengthMismatch {
            what: "metric candidates vs references",
            left: cands.len(),
            right: refs.len(),
        });
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts: BTreeMap<&[String], usize> = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU: clipped n-gram matches are pooled over the whole corpus for
/// n = 1..4, combined by a geometric mean, multiplied by the brevity penalty,
/// and scaled to [0, 100]. No smoothing: a vanished precision at any order
/// gives 0.
pub fn corpus_bleu(cands: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_pairs(cands, refs)?;
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (c, r) in cands.iter().zip(refs.iter()) {
            let cg = ngram_counts(c, n);
            let rg = ngram_counts(r, n);
            for (g, &v) in &cg {
                matched += v.min(rg.get(g).copied().unwrap_or(0));
            }
            total += c.len().saturating_sub(n - 1);
        }
        if total == 0 || matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let c_len: usize = cands.iter().map(|c| c.len()).sum();
    let r_len: usize = refs.iter().map(|r| r.len()).sum();
    if c_len == 0 {
        return Ok(0.0);
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / 4.0).exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            dp[i][j] = if a[i - 1] == b[j - 1] {
                dp[i - 1][j - 1] + 1
            } else {
                dp[i - 1][j].max(dp[i][j - 1])
            };
        }
    }
    dp[a.len()][b.len()]
}

/// ROUGE-L: per-pair LCS F-measure with beta = 1.2 (recall-weighted),
/// averaged over pairs and scaled to [0, 100].
pub fn rouge_l(cands: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_pairs(cands, refs)?;
    const BETA: f64 = 1.2;
    let mut total = 0.0;
    for (c, r) in cands.iter().zip(refs.iter()) {
        let lcs = lcs_len(c, r) as f64;
        let p = if c.is_empty() { 0.0 } else { lcs / c.len() as f64 };
        let rec = if r.is_empty() { 0.0 } else { lcs / r.len() as f64 };
        let denom = rec + BETA * BETA * p;
        if denom > 0.0 {
            total += (1.0 + BETA * BETA) * rec * p / denom;
        }
    }
    Ok(100.0 * total / cands.len() as f64)
}

fn cosine(a: &BTreeMap<&[String], f64>, b: &BTreeMap<&[String], f64>) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(g, &va)| b.get(g).map(|&vb| va * vb))
        .sum();
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// CIDEr: tf-idf weighted n-gram cosine similarity between candidate and
/// reference, idf taken over the reference corpus, averaged over n = 1..4
/// and pairs, scaled by 10. With a single reference per candidate the idf of
/// an unseen n-gram uses df clamped to 1 and no additive smoothing; reports
/// must state this convention.
pub fn cider(cands: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_pairs(cands, refs)?;
    let m = refs.len() as f64;
    let mut score = 0.0;
    for n in 1..=4 {
        let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
        for r in refs {
            for g in ngram_counts(r, n).keys() {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        fn vec_of<'a>(
            tokens: &'a [String],
            n: usize,
            df: &BTreeMap<&[String], usize>,
            m: f64,
        ) -> BTreeMap<&'a [String], f64> {
            ngram_counts(tokens, n)
                .into_iter()
                .map(|(g, c)| {
                    let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
                    (g, c as f64 * (m.ln() - d.ln()))
                })
                .collect()
        }
        for (c, r) in cands.iter().zip(refs.iter()) {
            score += cosine(&vec_of(c, n, &df, m), &vec_of(r, n, &df, m));
        }
    }
    Ok(10.0 * score / (4.0 * m))
}

/// Corpus-level distinct-n: unique n-grams across all candidates divided by
/// the total n-gram count. All-too-short input yields 0 with a warning on
/// stderr.
pub fn distinct_n(cands: &[Vec<String>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("distinct-n needs n >= 1".into()));
    }
    if cands.is_empty() {
        return Err(Error::EmptyDataset("metric candidates"));
    }
    let mut seen: HashSet<&[String]> = HashSet::new();
    let mut total = 0usize;
    for c in cands {
        if c.len() >= n {
            for w in c.windows(n) {
                seen.insert(w);
                total += 1;
            }
        }
    }
    if total == 0 {
        eprintln!("warning: no candidate reaches length {n}; distinct-{n} reported as 0");
        return Ok(0.0);
    }
    Ok(seen.len() as f64 / total as f64)
}
