//! Rank-based metrics. Ties always go to the lower index.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    /// Rows are audio queries ranked over texts.
    AudioToText,
    /// Columns are text queries ranked over audio.
    TextToAudio,
}

impl Direction {
    pub fn short(self) -> &'static str {
        match self {
            Direction::AudioToText => "a2t",
            Direction::TextToAudio => "t2a",
        }
    }
}

/// 0-based rank of candidate `target` among `scores`.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    scores.iter().enumerate().filter(|&(j, &v)| v > s || (v == s && j < target)).count()
}

/// Rank of each query's matching item (the diagonal).
pub fn diagonal_ranks(sim: &Tensor, dir: Direction) -> Result<Vec<usize>> {
    if sim.shape().len() != 2 || sim.rows() != sim.cols() || sim.rows() == 0 {
        return Err(Error::dim("recall_at_k", format!("need a non-empty square matrix, got {:?}", sim.shape())));
    }
    let n = sim.rows();
    Ok((0..n)
        .map(|i| match dir {
            Direction::AudioToText => rank_of(sim.row(i), i),
            Direction::TextToAudio => {
                let col: Vec<f64> = (0..n).map(|j| sim.at(j, i)).collect();
                rank_of(&col, i)
            }
        })
        .collect())
}

pub fn recall_at_k(sim: &Tensor, k: usize, dir: Direction) -> Result<f64> {
    let n = sim.rows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("recall@{k} needs 1 <= K <= {n}")));
    }
    let ranks = diagonal_ranks(sim, dir)?;
    Ok(ranks.iter().filter(|&&r| r < k).count() as f64 / n as f64)
}

/// Index of the highest score, first one on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Macro-averaged average precision over classes that have at least one
/// positive. Returns the mean and the excluded (positive-free) classes.
pub fn mean_average_precision(scores: &Tensor, truths: &Tensor) -> Result<(f64, Vec<usize>)> {
    if scores.shape() != truths.shape() || scores.shape().len() != 2 {
        return Err(Error::dim("mean_average_precision", format!("scores {:?} vs truths {:?}", scores.shape(), truths.shape())));
    }
    let (items, classes) = (scores.rows(), scores.cols());
    let mut aps = Vec::new();
    let mut excluded = Vec::new();
    for c in 0..classes {
        let col: Vec<f64> = (0..items).map(|i| scores.at(i, c)).collect();
        let pos: Vec<bool> = (0..items).map(|i| truths.at(i, c) > 0.5).collect();
        if !pos.iter().any(|&p| p) {
            excluded.push(c);
            continue;
        }
        let mut order: Vec<usize> = (0..items).collect();
        order.sort_by_key(|&i| rank_of(&col, i));
        let (mut hits, mut sum) = (0usize, 0.0);
        for (r, &i) in order.iter().enumerate() {
            if pos[i] {
                hits += 1;
                sum += hits as f64 / (r + 1) as f64;
            }
        }
        aps.push(sum / hits as f64);
    }
    if aps.is_empty() {
        return Err(Error::Evaluation("no class has a positive item".into()));
    }
    Ok((aps.iter().sum::<f64>() / aps.len() as f64, excluded))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(n: usize) -> Tensor {
        let mut d = vec![0.0; n * n];
        (0..n).for_each(|i| d[i * n + i] = 1.0);
        Tensor::matrix(n, n, d).unwrap()
    }

    #[test]
    fn identity_and_ties() {
        assert_eq!(recall_at_k(&eye(10), 1, Direction::AudioToText).unwrap(), 1.0);
        let zeros = Tensor::zeros(&[10, 10]);
        for dir in [Direction::AudioToText, Direction::TextToAudio] {
            assert!((recall_at_k(&zeros, 1, dir).unwrap() - 0.1).abs() < 1e-12);
        }
        assert!(matches!(recall_at_k(&eye(3), 4, Direction::AudioToText), Err(Error::Config(_))));
    }

    #[test]
    fn second_place_diagonal() {
        let n = 6;
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 0.5;
            d[i * n + (i + 1) % n] = 0.9;
        }
        let s = Tensor::matrix(n, n, d).unwrap();
        assert_eq!(recall_at_k(&s, 1, Direction::AudioToText).unwrap(), 0.0);
        assert_eq!(recall_at_k(&s, 2, Direction::AudioToText).unwrap(), 1.0);
    }

    #[test]
    fn average_precision_fixture() {
        let scores = Tensor::matrix(4, 1, vec![0.9, 0.8, 0.7, 0.1]).unwrap();
        let truths = Tensor::matrix(4, 1, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let (m, ex) = mean_average_precision(&scores, &truths).unwrap();
        assert!((m - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!(ex.is_empty());
        let (m, ex) = mean_average_precision(&Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(), &Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!((m, ex), (1.0, vec![1]));
        assert!(matches!(mean_average_precision(&scores, &Tensor::zeros(&[4, 1])), Err(Error::Evaluation(_))));
    }
}
