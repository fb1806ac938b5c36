use std::collections::BTreeMap;

use super::ranking::{recall_at_k, Direction};
use crate::contrastive::{similarity_matrix, train_stage, PairSet, Selection, StageReport, TrainConfig};
use crate::encoders::{BiEncoder, BiEncoderModel};
use crate::error::{Error, Result};

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// R@1/5/10 in both directions, keyed like `a2t_r@1`. Ks larger than the
/// number of pairs are skipped.
pub fn retrieval_report(model: &BiEncoderModel, pairs: &PairSet) -> Result<BTreeMap<String, f64>> {
    if pairs.is_empty() {
        return Err(Error::Evaluation("retrieval needs at least one pair".into()));
    }
    let audio = model.embed_audio(&pairs.mel_refs())?;
    let text = model.embed_tokens(&pairs.tokens)?;
    let sim = similarity_matrix(&audio, &text)?;
    let mut out = BTreeMap::new();
    for dir in [Direction::AudioToText, Direction::TextToAudio] {
        for k in RECALL_KS.into_iter().filter(|&k| k <= pairs.len()) {
            out.insert(format!("{}_r@{k}", dir.short()), recall_at_k(&sim, k, dir)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    /// Validation interval in iterations; `None` validates once per epoch.
    #[serde(default)]
    pub validate_every: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 128, max_lr: 5e-5, validate_every: None, seed: 0 }
    }
}

impl FinetuneConfig {
    /// The equivalent contrastive schedule: warmup over the first epoch,
    /// cosine decay after it.
    pub fn train_config(&self, train_pairs: usize) -> Result<TrainConfig> {
        let per_epoch = train_pairs / self.batch_size.max(1);
        if per_epoch == 0 {
            return Err(Error::Config(format!("{train_pairs} training pairs is fewer than batch_size {}", self.batch_size)));
        }
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            total_iters: self.epochs * per_epoch,
            warmup_iters: per_epoch.min(self.epochs * per_epoch),
            max_lr: self.max_lr,
            validate_every: self.validate_every.unwrap_or(per_epoch),
            seed: self.seed,
            selection: Selection::MeanRecall,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct FinetuneOutcome {
    /// Absent for a zero-epoch run.
    pub stage: Option<StageReport>,
    pub test: BTreeMap<String, f64>,
}

/// Continues contrastive training on a downstream pair set and reports
/// retrieval on `test`. The model keeps the best-validated parameters.
pub fn finetune_retrieval(model: &mut BiEncoderModel, train: &PairSet, val: &PairSet, test: &PairSet, cfg: &FinetuneConfig) -> Result<FinetuneOutcome> {
    let stage = if cfg.epochs == 0 {
        None
    } else {
        let tc = cfg.train_config(train.len())?;
        Some(train_stage(model, train, val, &tc, "finetune")?)
    };
    Ok(FinetuneOutcome { stage, test: retrieval_report(model, test)? })
}
