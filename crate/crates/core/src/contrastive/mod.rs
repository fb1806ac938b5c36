//! Symmetric InfoNCE pre-training of the bi-encoder and its checkpoints.

mod loss;
mod schedule;
mod trainer;

pub use loss::{cosine_scores, infonce_loss, similarity_matrix, InfoNce};
pub use schedule::{lr_schedule, Selection, TrainConfig};
pub use trainer::{
    contrastive_step, pretrain_two_stage, train_stage, validate, write_trace, PairSet, PretrainReport, StageReport, TraceRow,
    Validation,
};

use std::path::Path;

use crate::checkpoint;
use crate::encoders::{BiEncoderConfig, BiEncoderModel};
use crate::error::{Error, Result};
use crate::textproc::Vocabulary;

pub const MODEL_KIND: &str = "biencoder";

pub fn checkpoint_bytes(model: &BiEncoderModel, stage: &str) -> Result<Vec<u8>> {
    checkpoint::encode(MODEL_KIND, stage, serde_json::to_value(&model.cfg)?, model.vocab.tokens(), &[], &model.params)
}

/// Writes the model and returns the SHA-256 of the file contents.
pub fn save_checkpoint(model: &BiEncoderModel, stage: &str, path: impl AsRef<Path>) -> Result<String> {
    let bytes = checkpoint_bytes(model, stage)?;
    checkpoint::write(path, &bytes)?;
    Ok(checkpoint::sha256_hex(&bytes))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<BiEncoderModel> {
    from_loaded(&checkpoint::read(path)?)
}

pub fn from_loaded(loaded: &checkpoint::Loaded) -> Result<BiEncoderModel> {
    let m = &loaded.manifest;
    if m.model != MODEL_KIND {
        return Err(Error::Checkpoint(format!("expected a {MODEL_KIND} checkpoint, found `{}`", m.model)));
    }
    let cfg: BiEncoderConfig = serde_json::from_value(m.config.clone())
        .map_err(|e| Error::Checkpoint(format!("stored bi-encoder config is invalid: {e}")))?;
    let vocab = Vocabulary::from_tokens(m.vocab.clone())?;
    let mut model = BiEncoderModel::new(&cfg, vocab, 0)?;
    checkpoint::restore(loaded, &mut model.params)?;
    Ok(model)
}
