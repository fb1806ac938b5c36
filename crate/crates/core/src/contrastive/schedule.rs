use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Mean of audio-to-text and text-to-audio R@1 on validation pairs.
    MeanRecall,
    /// Lowest validation InfoNCE.
    Loss,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_iters: usize,
    pub warmup_iters: usize,
    pub max_lr: f64,
    pub validate_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_selection")]
    pub selection: Selection,
}

fn default_selection() -> Selection {
    Selection::MeanRecall
}

impl TrainConfig {
    /// Large-scale synthetic-pair stage.
    pub fn full_stage1() -> Self {
        Self { batch_size: 128, total_iters: 200_000, warmup_iters: 10_000, max_lr: 1e-4, validate_every: 500, seed: 0, selection: Selection::MeanRecall }
    }

    /// Follow-up stage on real pairs.
    pub fn full_stage2() -> Self {
        Self { total_iters: 15_000, warmup_iters: 750, validate_every: 750, ..Self::full_stage1() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size {} leaves no negatives", self.batch_size)));
        }
        if self.warmup_iters > self.total_iters {
            return Err(Error::Config(format!("warmup_iters {} exceeds total_iters {}", self.warmup_iters, self.total_iters)));
        }
        if self.validate_every == 0 {
            return Err(Error::Config("validate_every must be positive".into()));
        }
        if !(self.max_lr.is_finite() && self.max_lr >= 0.0) {
            return Err(Error::Config(format!("max_lr {} is not a valid rate", self.max_lr)));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `max_lr`, then half-cosine down to 0.
pub fn lr_schedule(iter: usize, cfg: &TrainConfig) -> f64 {
    let iter = iter.min(cfg.total_iters);
    if iter < cfg.warmup_iters {
        return cfg.max_lr * iter as f64 / cfg.warmup_iters as f64;
    }
    let span = cfg.total_iters - cfg.warmup_iters;
    if span == 0 {
        return cfg.max_lr;
    }
    let progress = (iter - cfg.warmup_iters) as f64 / span as f64;
    cfg.max_lr * 0.5 * (1.0 + (PI * progress).cos())
}
