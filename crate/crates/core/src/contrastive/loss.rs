use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Cosine similarity of every audio row against every text row.
pub fn similarity_matrix(audio: &Tensor, text: &Tensor) -> Result<Tensor> {
    if audio.shape().len() != 2 || audio.shape() != text.shape() {
        return Err(Error::dim("similarity_matrix", format!("audio {:?} vs text {:?}", audio.shape(), text.shape())));
    }
    cosine_scores(audio, text)
}

/// `[rows(a), rows(b)]` cosine similarities; counts may differ.
pub fn cosine_scores(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.cols() {
        return Err(Error::dim("cosine_scores", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let unit = |t: &Tensor, what: &str| -> Result<Vec<Vec<f64>>> {
        (0..t.rows())
            .map(|i| {
                let r = t.row(i);
                let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::Numeric(format!("{what} embedding row {i} has norm {norm}")));
                }
                Ok(r.iter().map(|v| v / norm).collect())
            })
            .collect()
    };
    let (ua, ub) = (unit(a, "audio")?, unit(b, "text")?);
    let mut out = Vec::with_capacity(ua.len() * ub.len());
    for x in &ua {
        for y in &ub {
            let s: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            out.push(s.clamp(-1.0, 1.0));
        }
    }
    Tensor::matrix(ua.len(), ub.len(), out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfoNce {
    /// `(1/N) * sum_i (a2t_i + t2a_i)`.
    pub total: f64,
    pub audio_to_text: Vec<f64>,
    pub text_to_audio: Vec<f64>,
}

fn neg_log_softmax_at(logits: &[f64], i: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[i]
}

/// Symmetric InfoNCE with matched pairs on the diagonal of `sim`.
pub fn infonce_loss(sim: &Tensor, temperature: f64) -> Result<InfoNce> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    if sim.shape().len() != 2 || sim.rows() != sim.cols() {
        return Err(Error::dim("infonce_loss", format!("need a square matrix, got {:?}", sim.shape())));
    }
    let n = sim.rows();
    if n < 2 {
        return Err(Error::Config("InfoNCE needs at least two pairs".into()));
    }
    let logits: Vec<f64> = sim.data().iter().map(|s| s / temperature).collect();
    if let Some(p) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("logit ({}, {}) is {}", p / n, p % n, logits[p])));
    }
    let audio_to_text: Vec<f64> = (0..n).map(|i| neg_log_softmax_at(&logits[i * n..(i + 1) * n], i)).collect();
    let text_to_audio: Vec<f64> = (0..n)
        .map(|i| {
            let col: Vec<f64> = (0..n).map(|j| logits[j * n + i]).collect();
            neg_log_softmax_at(&col, i)
        })
        .collect();
    let total = (audio_to_text.iter().sum::<f64>() + text_to_audio.iter().sum::<f64>()) / n as f64;
    Ok(InfoNce { total, audio_to_text, text_to_audio })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_fixtures() {
        let a = Tensor::matrix(2, 2, vec![1.0, 0.0, 3.0, 4.0]).unwrap();
        let s = similarity_matrix(&a, &a).unwrap();
        assert_eq!((s.at(0, 0), s.at(1, 1)), (1.0, 1.0));
        let o = similarity_matrix(&Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(), &Tensor::matrix(1, 2, vec![0.0, 2.0]).unwrap()).unwrap();
        assert_eq!(o.at(0, 0), 0.0);
        let scaled = Tensor::matrix(2, 2, vec![3.0, 0.0, 3.0, 4.0]).unwrap();
        let s2 = similarity_matrix(&scaled, &a).unwrap();
        for j in 0..2 {
            assert!((s2.at(0, j) - s.at(0, j)).abs() < 1e-12);
        }
        let z = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let err = similarity_matrix(&a, &z).unwrap_err().to_string();
        assert!(err.contains("text embedding row 1"), "{err}");
    }

    #[test]
    fn closed_forms() {
        let u = infonce_loss(&Tensor::full(&[4, 4], 0.3), 1.0).unwrap();
        assert!((u.total - 2.0 * 4f64.ln()).abs() < 1e-12);
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        for (tau, term) in [(1.0, 0.313262), (0.5, 0.126928)] {
            let l = infonce_loss(&eye, tau).unwrap();
            let exact = (-1.0f64 / tau).exp().ln_1p();
            assert!((l.audio_to_text[0] - exact).abs() < 1e-12 && (exact - term).abs() < 1e-6);
            assert!((l.total - 4.0 * exact / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(infonce_loss(&eye, 0.0), Err(Error::Config(_))));
        assert!(matches!(infonce_loss(&eye, 1e-320), Err(Error::Numeric(_))));
        assert!(matches!(infonce_loss(&Tensor::zeros(&[1, 1]), 1.0), Err(Error::Config(_))));
    }
}
