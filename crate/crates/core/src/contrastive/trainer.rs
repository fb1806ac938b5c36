use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;

use super::loss::{infonce_loss, similarity_matrix};
use super::schedule::{lr_schedule, Selection, TrainConfig};
use crate::audiofront::MelSpectrogram;
use crate::diffcore::{adam_step, AdamConfig, Ctx, Mode, OptimizerState, Tape};
use crate::encoders::{BiEncoder, BiEncoderModel, LOG_TEMPERATURE};
use crate::error::{Error, Result};
use crate::evalsuite::{recall_at_k, Direction};
use crate::seeding::rng_for;

/// Aligned audio features and token sequences; pair `i` is a positive.
#[derive(Clone, Debug, Default)]
pub struct PairSet {
    pub ids: Vec<String>,
    pub mels: Vec<Arc<MelSpectrogram>>,
    pub tokens: Vec<Vec<usize>>,
}

impl PairSet {
    pub fn push(&mut self, id: impl Into<String>, mel: Arc<MelSpectrogram>, tokens: Vec<usize>) {
        self.ids.push(id.into());
        self.mels.push(mel);
        self.tokens.push(tokens);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn mel_refs(&self) -> Vec<&MelSpectrogram> {
        self.mels.iter().map(|m| m.as_ref()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Validation {
    pub loss: f64,
    pub r1_a2t: f64,
    pub r1_t2a: f64,
}

impl Validation {
    pub fn mean_r1(&self) -> f64 {
        (self.r1_a2t + self.r1_t2a) / 2.0
    }

    fn score(&self, sel: Selection) -> f64 {
        match sel {
            Selection::MeanRecall => self.mean_r1(),
            Selection::Loss => -self.loss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: Option<f64>,
    pub lr: f64,
    pub val: Option<Validation>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct StageReport {
    pub stage: String,
    pub trace: Vec<TraceRow>,
    pub initial: Validation,
    pub best: Validation,
    pub best_iter: usize,
}

impl StageReport {
    /// First validated iteration whose mean R@1 reaches `target`.
    pub fn iters_to_reach(&self, target: f64) -> Option<usize> {
        self.trace.iter().find(|r| r.val.is_some_and(|v| v.mean_r1() >= target)).map(|r| r.iter)
    }
}

/// Embeds all validation pairs and scores them. The loss averages InfoNCE
/// over consecutive chunks of `chunk` pairs, so it is comparable to the
/// training loss regardless of validation set size.
pub fn validate(model: &BiEncoderModel, val: &PairSet, chunk: usize) -> Result<Validation> {
    if val.len() < 2 {
        return Err(Error::Config(format!("validation needs at least 2 pairs, got {}", val.len())));
    }
    let audio = model.embed_audio(&val.mel_refs())?;
    let text = model.embed_tokens(&val.tokens)?;
    let sim = similarity_matrix(&audio, &text)?;
    let n = val.len();
    let chunk = chunk.clamp(2, n);
    let tau = model.temperature();
    let mut losses = Vec::new();
    for start in (0..n).step_by(chunk) {
        let len = chunk.min(n - start);
        if len < chunk && !losses.is_empty() {
            break;
        }
        let mut sub = Vec::with_capacity(len * len);
        for i in start..start + len {
            sub.extend_from_slice(&sim.row(i)[start..start + len]);
        }
        losses.push(infonce_loss(&crate::diffcore::Tensor::matrix(len, len, sub)?, tau)?.total);
    }
    Ok(Validation {
        loss: losses.iter().sum::<f64>() / losses.len() as f64,
        r1_a2t: recall_at_k(&sim, 1, Direction::AudioToText)?,
        r1_t2a: recall_at_k(&sim, 1, Direction::TextToAudio)?,
    })
}

/// One optimizer step on a batch; returns the batch loss.
pub fn contrastive_step(
    model: &mut BiEncoderModel,
    mels: &[&MelSpectrogram],
    tokens: &[Vec<usize>],
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &model.params, Mode::Train);
    let audio = model.audio.forward(&ctx, mels)?.l2_normalize_rows();
    let text = model.text.forward(&ctx, tokens)?.l2_normalize_rows();
    let inv_tau = ctx.param(LOG_TEMPERATURE)?.neg().exp();
    let loss = audio.matmul_t(text).mul_scalar(inv_tau).info_nce();
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("contrastive loss is {value}")));
    }
    let grads = tape.backward(loss)?;
    let mut rec = ctx.finish();
    model.params.accumulate(&rec, grads);
    model.params.commit_stats(&mut rec);
    adam_step(&mut model.params, opt, lr)?;
    model.params.zero_grad();
    model.clamp_temperature()?;
    Ok(value)
}

/// Trains on shuffled batches (epochs without replacement, short tail
/// dropped), validating every `validate_every` iterations and at the end.
/// The model is left holding the best validated parameters, which may be
/// the starting ones.
pub fn train_stage(model: &mut BiEncoderModel, train: &PairSet, val: &PairSet, cfg: &TrainConfig, stage: &str) -> Result<StageReport> {
    cfg.validate()?;
    if train.len() < cfg.batch_size {
        return Err(Error::Config(format!("{stage}: {} training pairs is fewer than batch_size {}", train.len(), cfg.batch_size)));
    }
    let initial = validate(model, val, cfg.batch_size)?;
    let mut trace = vec![TraceRow { iter: 0, loss: None, lr: 0.0, val: Some(initial) }];
    let (mut best, mut best_iter, mut best_params) = (initial, 0, model.params.clone());
    let mut opt = OptimizerState::new(AdamConfig::default());
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    for iter in 1..=cfg.total_iters {
        if order.len() < cfg.batch_size {
            order = (0..train.len()).collect();
            order.shuffle(&mut rng_for(cfg.seed, stage, epoch));
            epoch += 1;
        }
        let idx: Vec<usize> = order.drain(..cfg.batch_size).collect();
        let mels: Vec<&MelSpectrogram> = idx.iter().map(|&i| train.mels[i].as_ref()).collect();
        let toks: Vec<Vec<usize>> = idx.iter().map(|&i| train.tokens[i].clone()).collect();
        let lr = lr_schedule(iter, cfg);
        let loss = contrastive_step(model, &mels, &toks, &mut opt, lr)?;
        let mut row = TraceRow { iter, loss: Some(loss), lr, val: None };
        if iter % cfg.validate_every == 0 || iter == cfg.total_iters {
            let v = validate(model, val, cfg.batch_size)?;
            if v.score(cfg.selection) > best.score(cfg.selection) {
                (best, best_iter, best_params) = (v, iter, model.params.clone());
            }
            row.val = Some(v);
        }
        trace.push(row);
    }
    model.params = best_params;
    Ok(StageReport { stage: stage.into(), trace, initial, best, best_iter })
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct PretrainReport {
    pub stage1: StageReport,
    pub stage2: StageReport,
}

/// Synthetic pairs first, then real pairs starting from the best stage-1
/// parameters.
pub fn pretrain_two_stage(
    model: &mut BiEncoderModel,
    synthetic: (&PairSet, &PairSet),
    real: (&PairSet, &PairSet),
    stage1: &TrainConfig,
    stage2: &TrainConfig,
) -> Result<PretrainReport> {
    for (name, set) in [("synthetic train", synthetic.0), ("synthetic val", synthetic.1), ("real train", real.0), ("real val", real.1)] {
        if set.is_empty() {
            return Err(Error::Config(format!("{name} pairs are empty")));
        }
    }
    let stage1 = train_stage(model, synthetic.0, synthetic.1, stage1, "stage1")?;
    let stage2 = train_stage(model, real.0, real.1, stage2, "stage2")?;
    Ok(PretrainReport { stage1, stage2 })
}

/// CSV with columns `iter,loss,lr,val_metric,val_loss`; the metric is mean R@1.
pub fn write_trace(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("iter,loss,lr,val_metric,val_loss\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iter,
            opt(r.loss),
            r.lr,
            opt(r.val.map(|v| v.mean_r1())),
            opt(r.val.map(|v| v.loss))
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::file(path, e))
}
