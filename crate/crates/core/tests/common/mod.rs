//! Shared fixtures and independent oracles for the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use audiotext::captioner::StepScorer;
use audiotext::diffcore::Tensor;
use audiotext::evalsuite::{bleu4, mean_average_precision, recall_at_k, rouge_l, Direction};
use audiotext::textproc::normalize;

pub fn words(s: &str) -> Vec<String> {
    normalize(s)
}

/// A named value with the one it should equal.
pub struct Expect {
    pub name: &'static str,
    pub got: f64,
    pub want: f64,
}

/// BLEU-4, ROUGE-L, AP and R@K against values worked out by hand.
pub fn hand_fixtures() -> Vec<Expect> {
    let mut out = Vec::new();
    let mut push = |name, got: audiotext::Result<f64>, want| out.push(Expect { name, got: got.unwrap(), want });

    push("bleu4 identical", bleu4(&words("a b c d e"), &[words("a b c d e")]), 1.0);
    push("bleu4 disjoint", bleu4(&words("x y z w"), &[words("a b c d")]), 0.0);
    push("bleu4 one substitution", bleu4(&words("a b c d e"), &[words("a b c d f")]), (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25));

    let beta2 = 1.2f64 * 1.2;
    let (p, r) = (2.0 / 3.0, 1.0);
    push("rouge_l identical", rouge_l(&words("a b c"), &[words("a b c")]), 1.0);
    push("rouge_l disjoint", rouge_l(&words("a b"), &[words("c d")]), 0.0);
    push("rouge_l lcs 2 of 3", rouge_l(&words("a b c"), &[words("a c")]), (1.0 + beta2) * p * r / (r + beta2 * p));

    let ap = |scores: Vec<f64>, truths: Vec<f64>| {
        let n = scores.len();
        mean_average_precision(&Tensor::matrix(n, 1, scores).unwrap(), &Tensor::matrix(n, 1, truths).unwrap()).map(|x| x.0)
    };
    push("ap perfect", ap(vec![0.9, 0.8, 0.1, 0.0], vec![1.0, 1.0, 0.0, 0.0]), 1.0);
    push("ap ranks 1 and 3", ap(vec![0.9, 0.8, 0.7, 0.1], vec![1.0, 0.0, 1.0, 0.0]), (1.0 + 2.0 / 3.0) / 2.0);

    let n = 10;
    let eye = Tensor::matrix(n, n, (0..n * n).map(|k| (k / n == k % n) as u8 as f64).collect()).unwrap();
    push("r@1 identity", recall_at_k(&eye, 1, Direction::AudioToText), 1.0);
    // each matched pair is exactly second best in its row and column
    let second: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i == j {
                0.5
            } else if j == (i + 1) % n {
                0.9
            } else {
                0.0
            }
        })
        .collect();
    let second = Tensor::matrix(n, n, second).unwrap();
    push("r@1 second place", recall_at_k(&second, 1, Direction::AudioToText), 0.0);
    push("r@2 second place", recall_at_k(&second, 2, Direction::AudioToText), 1.0);
    push("t2a r@1 second place", recall_at_k(&second, 1, Direction::TextToAudio), 0.0);
    let zeros = Tensor::zeros(&[n, n]);
    push("r@1 all ties", recall_at_k(&zeros, 1, Direction::AudioToText), 0.1);
    out
}

/// Five short items with 1 to 3 references each.
pub fn cider_fixture() -> (Vec<Vec<String>>, Vec<Vec<Vec<String>>>) {
    let items: [(&str, &[&str]); 5] = [
        ("a dog barks then rain falls", &["a dog barks and then rain falls", "rain falls after a dog barks"]),
        ("a low tone hums", &["a low tone hums", "a deep buzz drones", "a low tone hums softly"]),
        ("white noise hisses", &["a burst of white noise"]),
        ("a high tone rings then a high tone rings", &["a high tone rings followed by white noise hisses", "a piercing high tone"]),
        ("birds chirp", &["a low rumble grows", "rain falls"]),
    ];
    let cands = items.iter().map(|(c, _)| words(c)).collect();
    let refs = items.iter().map(|(_, rs)| rs.iter().map(|r| words(r)).collect()).collect();
    (cands, refs)
}

/// CIDEr-D written directly from its definition: per n, TF-IDF vectors with
/// idf = ln(N / max(1, df)); clipped dot product `sum min(c, r) * r`
/// divided by both norms; Gaussian length penalty with sigma 6; mean over
/// n = 1..4 and over references; times 10.
pub fn cider_oracle(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Vec<f64> {
    fn grams(t: &[String], n: usize) -> BTreeMap<Vec<String>, f64> {
        let mut m = BTreeMap::new();
        for i in 0..t.len().saturating_sub(n - 1) {
            *m.entry(t[i..i + n].to_vec()).or_insert(0.0) += 1.0;
        }
        m
    }
    let big_n = cands.len() as f64;
    let mut df: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    for rs in refs {
        let mut present = std::collections::BTreeSet::new();
        for r in rs {
            for n in 1..=4 {
                present.extend(grams(r, n).into_keys());
            }
        }
        for g in present {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let tfidf = |t: &[String], n: usize| -> BTreeMap<Vec<String>, f64> {
        grams(t, n).into_iter().map(|(g, tf)| {
            let d = df.get(&g).copied().unwrap_or(0.0).max(1.0);
            let w = tf * (big_n / d).ln();
            (g, w)
        }).collect()
    };
    let norm = |v: &BTreeMap<Vec<String>, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    cands
        .iter()
        .zip(refs)
        .map(|(c, rs)| {
            let mut per_ref = 0.0;
            for r in rs {
                let penalty = (-((c.len() as f64 - r.len() as f64).powi(2)) / 72.0).exp();
                let mut over_n = 0.0;
                for n in 1..=4 {
                    let (vc, vr) = (tfidf(c, n), tfidf(r, n));
                    let mut dot = 0.0;
                    for (g, wc) in &vc {
                        if let Some(wr) = vr.get(g) {
                            dot += wc.min(*wr) * wr;
                        }
                    }
                    let (nc, nr) = (norm(&vc), norm(&vr));
                    let sim = if nc > 0.0 && nr > 0.0 { dot / (nc * nr) } else { dot };
                    over_n += penalty * sim;
                }
                per_ref += over_n / 4.0;
            }
            10.0 * per_ref / rs.len() as f64
        })
        .collect()
}

/// Random next-token distributions, fixed per prefix.
pub struct TableScorer {
    pub vocab: usize,
    state: u64,
    table: HashMap<Vec<usize>, Vec<f64>>,
}

impl TableScorer {
    pub fn new(vocab: usize, seed: u64) -> Self {
        Self { vocab, state: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1, table: HashMap::new() }
    }

    fn uniform(&mut self) -> f64 {
        self.state ^= self.state << 13;
        self.state ^= self.state >> 7;
        self.state ^= self.state << 17;
        (self.state >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn dist(&mut self, prefix: &[usize]) -> Vec<f64> {
        if !self.table.contains_key(prefix) {
            // cubed draws give peaked rows, where greedy and beam disagree
            let w: Vec<f64> = (0..self.vocab).map(|_| self.uniform().powi(3) + 1e-3).collect();
            let total: f64 = w.iter().sum();
            self.table.insert(prefix.to_vec(), w.iter().map(|x| (x / total).ln()).collect());
        }
        self.table[prefix].clone()
    }

    /// Best complete sequence by enumeration: ends in `eos` within
    /// `max_len` tokens or stops at exactly `max_len`.
    pub fn exhaustive_best(&mut self, max_len: usize, eos: usize) -> (Vec<usize>, f64) {
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        let mut stack = vec![(Vec::new(), 0.0)];
        while let Some((prefix, score)) = stack.pop() {
            for (tok, lp) in self.dist(&prefix).into_iter().enumerate() {
                let mut p: Vec<usize> = prefix.clone();
                p.push(tok);
                let s = score + lp;
                if tok == eos || p.len() == max_len {
                    if s > best.1 {
                        best = (p, s);
                    }
                } else {
                    stack.push((p, s));
                }
            }
        }
        best
    }

    /// Argmax at every step, stopping at `eos` or `max_len`.
    pub fn greedy(&mut self, max_len: usize, eos: usize) -> (Vec<usize>, f64) {
        let (mut p, mut s) = (Vec::new(), 0.0);
        while p.len() < max_len {
            let d = self.dist(&p);
            let tok = (0..d.len()).fold(0, |b, i| if d[i] > d[b] { i } else { b });
            s += d[tok];
            p.push(tok);
            if tok == eos {
                break;
            }
        }
        (p, s)
    }
}

impl StepScorer for TableScorer {
    fn log_probs(&mut self, prefixes: &[Vec<usize>]) -> audiotext::Result<Vec<Vec<f64>>> {
        Ok(prefixes.iter().map(|p| self.dist(p)).collect())
    }
}
