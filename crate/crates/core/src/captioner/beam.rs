use crate::error::{Error, Result};

/// Anything that scores the next token for a batch of prefixes.
pub trait StepScorer {
    /// Natural-log probabilities over the vocabulary, one row per prefix.
    /// Prefixes hold generated tokens only; the start token is implied.
    fn log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct BeamHypothesis {
    /// Generated tokens, ending with the end token when finished.
    pub tokens: Vec<usize>,
    /// Sum of stepwise log-probabilities.
    pub score: f64,
    pub finished: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub eos: usize,
}

/// Keeps the `beam_size` best candidates per step. Candidates ending in
/// `eos` are set aside as finished; any still open at `max_len` tokens are
/// force-finished. Returns the best set-aside hypothesis by raw score
/// (`finished == false` means it was forced). Ties go to the candidate
/// generated first.
pub fn beam_search(scorer: &mut dyn StepScorer, cfg: BeamConfig) -> Result<BeamHypothesis> {
    if cfg.beam_size == 0 {
        return Err(Error::Config("beam_size must be at least 1".into()));
    }
    if cfg.max_len < 2 {
        return Err(Error::Config(format!("max_len {} is below 2", cfg.max_len)));
    }
    let mut alive = vec![BeamHypothesis { tokens: Vec::new(), score: 0.0, finished: false }];
    let mut done: Option<BeamHypothesis> = None;
    let better = |h: &BeamHypothesis, cur: &Option<BeamHypothesis>| cur.as_ref().is_none_or(|c| h.score > c.score);
    for step in 0..cfg.max_len {
        let prefixes: Vec<Vec<usize>> = alive.iter().map(|h| h.tokens.clone()).collect();
        let rows = scorer.log_probs(&prefixes)?;
        if rows.len() != alive.len() {
            return Err(Error::dim("beam_search", format!("scorer returned {} rows for {} prefixes", rows.len(), alive.len())));
        }
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (b, row) in rows.iter().enumerate() {
            for (tok, &lp) in row.iter().enumerate() {
                if lp.is_nan() {
                    return Err(Error::Numeric(format!("log-probability of token {tok} is NaN")));
                }
                if lp > f64::NEG_INFINITY {
                    cands.push((alive[b].score + lp, b, tok));
                }
            }
        }
        // stable: equal scores keep generation order
        cands.sort_by(|x, y| y.0.total_cmp(&x.0));
        cands.truncate(cfg.beam_size);
        let last = step + 1 == cfg.max_len;
        let mut next = Vec::with_capacity(cands.len());
        for (score, b, tok) in cands {
            let mut tokens = alive[b].tokens.clone();
            tokens.push(tok);
            let finished = tok == cfg.eos;
            let h = BeamHypothesis { tokens, score, finished };
            if finished || last {
                if better(&h, &done) {
                    done = Some(h);
                }
            } else {
                next.push(h);
            }
        }
        alive = next;
        // scores only fall as hypotheses grow
        let best_open = alive.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        if alive.is_empty() || done.as_ref().is_some_and(|d| d.score >= best_open) {
            break;
        }
    }
    done.ok_or_else(|| Error::Numeric("beam search found no hypothesis with finite score".into()))
}

/// Always takes the most likely next token.
pub fn greedy_search(scorer: &mut dyn StepScorer, max_len: usize, eos: usize) -> Result<BeamHypothesis> {
    let mut h = BeamHypothesis { tokens: Vec::new(), score: 0.0, finished: false };
    while h.tokens.len() < max_len {
        let row = scorer.log_probs(std::slice::from_ref(&h.tokens))?.remove(0);
        let tok = crate::evalsuite::argmax(&row);
        h.score += row[tok];
        h.tokens.push(tok);
        if tok == eos {
            h.finished = true;
            break;
        }
    }
    Ok(h)
}

#[cfg(test)]
pub(crate) mod tests {
    use std::collections::HashMap;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Fixed next-token distributions for every prefix, drawn lazily.
    pub struct TableScorer {
        pub vocab: usize,
        pub rng: ChaCha8Rng,
        pub table: HashMap<Vec<usize>, Vec<f64>>,
    }

    impl TableScorer {
        pub fn random(vocab: usize, seed: u64) -> Self {
            Self { vocab, rng: ChaCha8Rng::seed_from_u64(seed), table: HashMap::new() }
        }

        pub fn dist(&mut self, prefix: &[usize]) -> Vec<f64> {
            if let Some(d) = self.table.get(prefix) {
                return d.clone();
            }
            // peaked draws make greedy and beam disagree often
            let w: Vec<f64> = (0..self.vocab).map(|_| self.rng.gen::<f64>().powi(3) + 1e-3).collect();
            let s: f64 = w.iter().sum();
            let lp: Vec<f64> = w.iter().map(|x| (x / s).ln()).collect();
            self.table.insert(prefix.to_vec(), lp.clone());
            lp
        }
    }

    impl StepScorer for TableScorer {
        fn log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
            Ok(prefixes.iter().map(|p| self.dist(p)).collect())
        }
    }

    /// Best complete sequence by enumeration: ends in `eos` within
    /// `max_len` tokens, or has exactly `max_len` tokens.
    pub fn brute_force(s: &mut TableScorer, max_len: usize, eos: usize) -> (Vec<usize>, f64) {
        fn go(s: &mut TableScorer, prefix: &mut Vec<usize>, score: f64, max_len: usize, eos: usize, best: &mut (Vec<usize>, f64)) {
            let d = s.dist(prefix);
            for (tok, lp) in d.into_iter().enumerate() {
                prefix.push(tok);
                let sc = score + lp;
                if tok == eos || prefix.len() == max_len {
                    if sc > best.1 {
                        *best = (prefix.clone(), sc);
                    }
                } else {
                    go(s, prefix, sc, max_len, eos, best);
                }
                prefix.pop();
            }
        }
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        go(s, &mut Vec::new(), 0.0, max_len, eos, &mut best);
        best
    }

    struct Fixture;

    impl StepScorer for Fixture {
        fn log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
            // tokens: 0 = end, 1 = "a", 2 = "b"
            Ok(prefixes
                .iter()
                .map(|p| {
                    let probs: [f64; 3] = match p.as_slice() {
                        [] => [0.0, 0.6, 0.4],
                        [1] => [0.5, 0.25, 0.25],
                        [2] => [0.9, 0.05, 0.05],
                        _ => [1.0, 0.0, 0.0],
                    };
                    probs.iter().map(|p| p.ln()).collect()
                })
                .collect())
        }
    }

    #[test]
    fn wider_beam_escapes_greedy_trap() {
        let cfg = BeamConfig { beam_size: 1, max_len: 5, eos: 0 };
        let g = beam_search(&mut Fixture, cfg).unwrap();
        assert_eq!(g.tokens, vec![1, 0]);
        assert!((g.score.exp() - 0.30).abs() < 1e-12);
        assert_eq!(g, greedy_search(&mut Fixture, 5, 0).unwrap());
        let b = beam_search(&mut Fixture, BeamConfig { beam_size: 2, ..cfg }).unwrap();
        assert_eq!(b.tokens, vec![2, 0]);
        assert!((b.score.exp() - 0.36).abs() < 1e-12 && b.finished);
    }

    #[test]
    fn full_width_matches_enumeration() {
        for seed in 0..100u64 {
            let vocab = 2 + seed as usize % 4;
            let max_len = 2 + (seed as usize / 4) % 3;
            let mut s = TableScorer::random(vocab, seed);
            let (tokens, score) = brute_force(&mut s, max_len, 0);
            let full = vocab.pow(max_len as u32);
            let h = beam_search(&mut s, BeamConfig { beam_size: full, max_len, eos: 0 }).unwrap();
            assert_eq!(h.tokens, tokens, "seed {seed}");
            assert!((h.score - score).abs() < 1e-12);
            assert_eq!(h.finished, tokens.last() == Some(&0));
        }
    }

    #[test]
    fn forced_finish_at_max_len() {
        struct NeverEnd;
        impl StepScorer for NeverEnd {
            fn log_probs(&mut self, p: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
                Ok(p.iter().map(|_| vec![f64::NEG_INFINITY, 0.0]).collect())
            }
        }
        let h = beam_search(&mut NeverEnd, BeamConfig { beam_size: 3, max_len: 4, eos: 0 }).unwrap();
        assert_eq!((h.tokens.len(), h.finished), (4, false));
        assert!(beam_search(&mut NeverEnd, BeamConfig { beam_size: 0, max_len: 4, eos: 0 }).is_err());
    }
}
