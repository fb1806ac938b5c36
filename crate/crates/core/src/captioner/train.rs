use std::sync::Arc;

use rand::seq::SliceRandom;

use super::model::CaptionModel;
use crate::audiofront::MelSpectrogram;
use crate::diffcore::{adam_step, AdamConfig, Ctx, Mode, OptimizerState, Tape, Var};
use crate::error::{Error, Result};
use crate::seeding::rng_for;
use crate::textproc::{decoder_io, EOS};

/// One training example: features, caption tokens (no markers) and tag rows.
#[derive(Clone, Debug)]
pub struct CaptionItem {
    pub clip_id: String,
    pub mel: Arc<MelSpectrogram>,
    pub caption: Vec<usize>,
    pub tags: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak rate reached at the end of warmup.
    pub max_lr: f64,
    /// Rate at the final iteration after exponential decay.
    pub final_lr: f64,
    /// Warmup length in iterations; `None` means one epoch.
    #[serde(default)]
    pub warmup_iters: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CaptionTrainConfig {
    fn default() -> Self {
        Self { epochs: 25, batch_size: 64, max_lr: 5e-4, final_lr: 5e-7, warmup_iters: None, seed: 0 }
    }
}

impl CaptionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("captioner epochs and batch_size must be positive".into()));
        }
        if !(self.max_lr > 0.0 && self.final_lr > 0.0 && self.final_lr <= self.max_lr && self.max_lr.is_finite()) {
            return Err(Error::Config(format!("need 0 < final_lr {} <= max_lr {}", self.final_lr, self.max_lr)));
        }
        Ok(())
    }

    pub fn iters_per_epoch(&self, items: usize) -> usize {
        items.div_ceil(self.batch_size)
    }
}

/// Linear warmup to `max_lr`, then exponential decay reaching `final_lr`
/// at `total`. `iter` counts from 1.
pub fn caption_lr(iter: usize, warmup: usize, total: usize, cfg: &CaptionTrainConfig) -> f64 {
    if iter <= warmup {
        return cfg.max_lr * iter as f64 / warmup.max(1) as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((iter - warmup) as f64 / span as f64).min(1.0);
    cfg.max_lr * (cfg.final_lr / cfg.max_lr).powf(progress)
}

/// Mean per-token cross entropy of the items' captions under teacher
/// forcing, and the number of predicted tokens.
pub fn teacher_forced_loss<'a>(ctx: &Ctx<'a, '_>, model: &CaptionModel, items: &[&CaptionItem]) -> Result<(Var<'a>, usize)> {
    if items.is_empty() {
        return Err(Error::Input("teacher forcing on an empty batch".into()));
    }
    let mels: Vec<&MelSpectrogram> = items.iter().map(|i| i.mel.as_ref()).collect();
    let memory = model.encode(ctx, &mels)?;
    let keep = model.cfg.max_len - 1;
    let (mut inputs, mut targets, mut tags) = (Vec::new(), Vec::new(), Vec::new());
    for it in items {
        let (input, mut target) = decoder_io(&it.caption[..it.caption.len().min(keep)]);
        if it.caption.len() > keep {
            *target.last_mut().expect("non-empty") = EOS;
        }
        targets.extend(target.into_iter().map(Some));
        inputs.push(input);
        tags.push(it.tags.clone());
    }
    let memory_of: Vec<usize> = (0..items.len()).collect();
    let logits = model.decode(ctx, &memory, &memory_of, &inputs, Some(&tags))?;
    Ok((logits.cross_entropy(&targets), targets.len()))
}

/// Token-weighted teacher-forced CE over a whole split in inference mode.
pub fn evaluate_ce(model: &CaptionModel, items: &[CaptionItem], batch: usize) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty split".into()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in items.chunks(batch.max(1)) {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &model.params, Mode::Eval);
        let refs: Vec<&CaptionItem> = chunk.iter().collect();
        let (loss, n) = teacher_forced_loss(&ctx, model, &refs)?;
        sum += loss.item() * n as f64;
        count += n;
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct CaptionTrace {
    /// Per-iteration `(iter, train loss, lr)`.
    pub steps: Vec<(usize, f64, f64)>,
    /// Per-epoch `(epoch, validation CE)`.
    pub val: Vec<(usize, f64)>,
    pub best_epoch: usize,
    pub best_val_ce: f64,
}

/// Trains with word-level cross entropy and leaves the model at the epoch
/// with the lowest validation CE.
pub fn train_captioner(model: &mut CaptionModel, train: &[CaptionItem], val: &[CaptionItem], cfg: &CaptionTrainConfig) -> Result<CaptionTrace> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("captioner needs non-empty train and validation splits".into()));
    }
    let per_epoch = cfg.iters_per_epoch(train.len());
    let total = per_epoch * cfg.epochs;
    let warmup = cfg.warmup_iters.unwrap_or(per_epoch).min(total);
    let mut opt = OptimizerState::new(AdamConfig::default());
    let mut trace = CaptionTrace { steps: Vec::new(), val: Vec::new(), best_epoch: 0, best_val_ce: f64::INFINITY };
    let mut best_params = model.params.clone();
    let mut iter = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, "captioner", epoch as u64));
        for idx in order.chunks(cfg.batch_size) {
            iter += 1;
            let lr = caption_lr(iter, warmup, total, cfg);
            let batch: Vec<&CaptionItem> = idx.iter().map(|&i| &train[i]).collect();
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &model.params, Mode::Train);
            let (loss, _) = teacher_forced_loss(&ctx, model, &batch)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("caption loss is {value} at iteration {iter}")));
            }
            let grads = tape.backward(loss)?;
            let mut rec = ctx.finish();
            model.params.accumulate(&rec, grads);
            model.params.commit_stats(&mut rec);
            adam_step(&mut model.params, &mut opt, lr)?;
            model.params.zero_grad();
            trace.steps.push((iter, value, lr));
        }
        let ce = evaluate_ce(model, val, cfg.batch_size)?;
        trace.val.push((epoch, ce));
        if ce < trace.best_val_ce {
            (trace.best_epoch, trace.best_val_ce, best_params) = (epoch, ce, model.params.clone());
        }
    }
    model.params = best_params;
    Ok(trace)
}
