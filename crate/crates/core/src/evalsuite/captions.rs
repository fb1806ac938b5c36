//! COCO-style caption metrics over normalized word tokens.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::textproc::normalize;

type Gram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<Gram<'_>, usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and candidate n-gram count.
fn clipped(cand: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let mut max_ref: BTreeMap<Gram<'_>, usize> = BTreeMap::new();
    for r in refs {
        for (g, k) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(k);
        }
    }
    let hits = c.iter().map(|(g, &k)| k.min(*max_ref.get(g).unwrap_or(&0))).sum();
    (hits, cand.len().saturating_sub(n - 1))
}

/// Length of the reference closest to `len`, shorter on ties.
fn closest_ref_len(len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter().map(|r| r.len()).min_by_key(|&r| (r.abs_diff(len), r)).unwrap_or(0)
}

fn bleu_from(hits: [usize; 4], totals: [usize; 4], cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 || hits.iter().zip(&totals).any(|(&h, &t)| h == 0 || t == 0) {
        return 0.0;
    }
    let log_p: f64 = hits.iter().zip(&totals).map(|(&h, &t)| (h as f64 / t as f64).ln()).sum::<f64>() / 4.0;
    let bp = if cand_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / cand_len as f64).exp() };
    bp * log_p.exp()
}

/// Sentence BLEU-4. Zero when the candidate is empty or any n-gram
/// precision is zero.
pub fn bleu4(candidate: &[String], references: &[Vec<String>]) -> Result<f64> {
    corpus_bleu4(&[(candidate.to_vec(), references.to_vec())])
}

/// Corpus BLEU-4: clipped counts and lengths summed over items before the
/// precisions and brevity penalty are formed.
pub fn corpus_bleu4(items: &[(Vec<String>, Vec<Vec<String>>)]) -> Result<f64> {
    let (mut hits, mut totals, mut c_len, mut r_len) = ([0usize; 4], [0usize; 4], 0, 0);
    for (cand, refs) in items {
        if refs.is_empty() {
            return Err(Error::Data("BLEU needs at least one reference per item".into()));
        }
        for n in 1..=4 {
            let (h, t) = clipped(cand, refs, n);
            hits[n - 1] += h;
            totals[n - 1] += t;
        }
        c_len += cand.len();
        r_len += closest_ref_len(cand.len(), refs);
    }
    Ok(bleu_from(hits, totals, c_len, r_len))
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS F-measure using the best precision and best recall over references.
pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Data("ROUGE-L needs at least one reference".into()));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for reference in references.iter().filter(|r| !r.is_empty()) {
        let l = lcs(candidate, reference) as f64;
        p = p.max(l / candidate.len() as f64);
        r = r.max(l / reference.len() as f64);
    }
    if p == 0.0 || r == 0.0 {
        return Ok(0.0);
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok((1.0 + b2) * p * r / (r + b2 * p))
}

pub const CIDER_SIGMA: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct CiderScores {
    pub per_item: Vec<f64>,
    pub mean: f64,
}

struct GramVec<'a> {
    weights: Vec<BTreeMap<Gram<'a>, f64>>,
    norms: Vec<f64>,
    len: usize,
}

fn vectorize<'a>(tokens: &'a [String], df: &BTreeMap<Gram<'_>, f64>, log_docs: f64) -> GramVec<'a> {
    let mut weights = Vec::with_capacity(4);
    let mut norms = Vec::with_capacity(4);
    for n in 1..=4 {
        let w: BTreeMap<Gram<'a>, f64> = ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, tf)| (g, tf as f64 * (log_docs - df.get(g).copied().unwrap_or(0.0).max(1.0).ln())))
            .collect();
        norms.push(w.values().map(|v| v * v).sum::<f64>().sqrt());
        weights.push(w);
    }
    GramVec { weights, norms, len: tokens.len() }
}

/// CIDEr-D: TF-IDF n-gram vectors (n = 1..4) with clipped cosine, a
/// Gaussian length penalty, averaged over n and references, times 10.
/// Document frequencies come from the references of all items.
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<CiderScores> {
    if candidates.len() != references.len() {
        return Err(Error::Data(format!("{} candidates vs {} reference sets", candidates.len(), references.len())));
    }
    if candidates.len() < 2 {
        return Err(Error::Statistics("CIDEr document frequencies need at least two items".into()));
    }
    let mut df: BTreeMap<Gram<'_>, f64> = BTreeMap::new();
    for refs in references {
        let mut seen = BTreeSet::new();
        for r in refs {
            for n in 1..=4 {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let log_docs = (candidates.len() as f64).ln();
    let mut per_item = Vec::with_capacity(candidates.len());
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Data("CIDEr needs at least one reference per item".into()));
        }
        let c = vectorize(cand, &df, log_docs);
        let mut total = 0.0;
        for r in refs {
            let r = vectorize(r, &df, log_docs);
            let delta = c.len as f64 - r.len as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            let mut sum_n = 0.0;
            for n in 0..4 {
                let mut v: f64 = c.weights[n]
                    .iter()
                    .map(|(g, &cw)| r.weights[n].get(g).map_or(0.0, |&rw| cw.min(rw) * rw))
                    .sum();
                if c.norms[n] != 0.0 && r.norms[n] != 0.0 {
                    v /= c.norms[n] * r.norms[n];
                }
                sum_n += v * penalty;
            }
            total += sum_n / 4.0;
        }
        per_item.push(10.0 * total / refs.len() as f64);
    }
    let mean = per_item.iter().sum::<f64>() / per_item.len() as f64;
    Ok(CiderScores { per_item, mean })
}

/// Caption metric over a corpus of `(candidate, references)` texts.
pub type CorpusMetric = dyn Fn(&[String], &[Vec<String>]) -> Result<f64>;

fn tokenized(cands: &[String], refs: &[Vec<String>]) -> (Vec<Vec<String>>, Vec<Vec<Vec<String>>>) {
    (
        cands.iter().map(|c| normalize(c)).collect(),
        refs.iter().map(|rs| rs.iter().map(|r| normalize(r)).collect()).collect(),
    )
}

pub fn bleu4_text(cands: &[String], refs: &[Vec<String>]) -> Result<f64> {
    let (c, r) = tokenized(cands, refs);
    corpus_bleu4(&c.into_iter().zip(r).collect::<Vec<_>>())
}

pub fn rouge_l_text(cands: &[String], refs: &[Vec<String>]) -> Result<f64> {
    let (c, r) = tokenized(cands, refs);
    if c.is_empty() {
        return Err(Error::Data("no captions to score".into()));
    }
    let scores: Result<Vec<f64>> = c.iter().zip(&r).map(|(c, r)| rouge_l(c, r)).collect();
    Ok(scores?.iter().sum::<f64>() / c.len() as f64)
}

pub fn cider_text(cands: &[String], refs: &[Vec<String>]) -> Result<f64> {
    let (c, r) = tokenized(cands, refs);
    Ok(cider(&c, &r)?.mean)
}

/// Human-level benchmark: with `R` references per item, each round lets
/// reference `r` play the candidate against the other `R - 1`; the `R`
/// corpus scores are averaged.
pub fn round_robin_eval(references: &[Vec<String>], metric: &CorpusMetric) -> Result<f64> {
    let r = references.first().map_or(0, |x| x.len());
    if references.iter().any(|x| x.len() != r) {
        return Err(Error::Data("every item needs the same number of references".into()));
    }
    if r < 2 {
        return Err(Error::Config(format!("round-robin needs at least 2 references per item, got {r}")));
    }
    let mut total = 0.0;
    for round in 0..r {
        let cands: Vec<String> = references.iter().map(|x| x[round].clone()).collect();
        let rest: Vec<Vec<String>> =
            references.iter().map(|x| x.iter().enumerate().filter(|&(j, _)| j != round).map(|(_, s)| s.clone()).collect()).collect();
        total += metric(&cands, &rest)?;
    }
    Ok(total / r as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        normalize(s)
    }

    #[test]
    fn bleu_fixtures() {
        assert_eq!(bleu4(&t("a b c d e"), &[t("a b c d e")]).unwrap(), 1.0);
        assert_eq!(bleu4(&t("x y z w"), &[t("a b c d")]).unwrap(), 0.0);
        let b = bleu4(&t("a b c d e"), &[t("a b c d f")]).unwrap();
        assert!((b - (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25)).abs() < 1e-12);
        assert!((b - 0.668740).abs() < 1e-6);
        assert_eq!(bleu4(&[], &[t("a b")]).unwrap(), 0.0);
        // brevity penalty against the closest reference
        let short = bleu4(&t("a b c d"), &[t("a b c d e f")]).unwrap();
        assert!((short - (1.0f64 - 6.0 / 4.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn rouge_fixtures() {
        assert_eq!(rouge_l(&t("a b c"), &[t("a b c")]).unwrap(), 1.0);
        assert_eq!(rouge_l(&t("a b c"), &[t("x y")]).unwrap(), 0.0);
        let f = rouge_l(&t("a b c"), &[t("a c")]).unwrap();
        let (p, r, b2) = (2.0 / 3.0, 1.0, 1.44);
        assert!((f - (1.0 + b2) * p * r / (r + b2 * p)).abs() < 1e-12);
        assert!((f - 0.829932).abs() < 1e-6);
        assert_eq!(rouge_l(&[], &[t("a")]).unwrap(), 0.0);
    }

    #[test]
    fn cider_basics() {
        let refs = vec![vec![t("a low tone hums")], vec![t("white noise hisses loudly")], vec![t("a high tone rings")]];
        let zero = cider(&[t("zzz qqq"), t("white noise hisses loudly"), t("a high tone rings")], &refs).unwrap();
        assert_eq!(zero.per_item[0], 0.0);
        let shuffled = cider(&[t("a high tone rings"), t("zzz qqq"), t("white noise hisses loudly")], &[refs[2].clone(), refs[0].clone(), refs[1].clone()]).unwrap();
        assert!((shuffled.mean - zero.mean).abs() < 1e-12);
        assert!(matches!(cider(&[t("a")], &[vec![t("a")]]), Err(Error::Statistics(_))));
    }

    #[test]
    fn round_robin_cases() {
        let same = vec![vec!["a low tone then white noise".to_string(); 5]; 3];
        assert_eq!(round_robin_eval(&same, &bleu4_text).unwrap(), 1.0);
        assert_eq!(round_robin_eval(&same, &rouge_l_text).unwrap(), 1.0);
        let pair = vec![vec!["a b c d e".to_string(), "a b c d f".to_string()]];
        let swap = (bleu4_text(&["a b c d e".into()], &[vec!["a b c d f".into()]]).unwrap()
            + bleu4_text(&["a b c d f".into()], &[vec!["a b c d e".into()]]).unwrap())
            / 2.0;
        assert!((round_robin_eval(&pair, &bleu4_text).unwrap() - swap).abs() < 1e-12);
        let odd = vec![vec!["a b c".to_string(), "a b c".into(), "a b c".into(), "x y z".into()]];
        assert!(round_robin_eval(&odd, &rouge_l_text).unwrap() < 1.0);
        let ragged = vec![vec!["a".to_string(), "b".into()], vec!["a".to_string()]];
        assert!(matches!(round_robin_eval(&ragged, &bleu4_text), Err(Error::Data(_))));
    }
}
