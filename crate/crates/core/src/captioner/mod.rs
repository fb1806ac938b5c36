//! Tag-guided audio captioning: model, training, beam decoding and the
//! JSON-lines caption output.

mod beam;
mod model;
mod train;

pub use beam::{beam_search, greedy_search, BeamConfig, BeamHypothesis, StepScorer};
pub use model::{decode_step, fuse_tag_embedding, CaptionModel, CaptionModelConfig, ClipScorer, Memory, TAG_TABLE};
pub use train::{caption_lr, evaluate_ce, teacher_forced_loss, train_captioner, CaptionItem, CaptionTrace, CaptionTrainConfig};

use std::io::{BufRead, Write};
use std::path::Path;

use crate::audiofront::MelSpectrogram;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::textproc::{detokenize, Vocabulary, EOS};

pub const MODEL_KIND: &str = "captioner";

/// One decoded caption.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratedCaption {
    pub clip_id: String,
    pub caption: String,
    /// Summed log-probability of the emitted tokens.
    pub score: f64,
    /// True when no hypothesis reached the end token before `max_len`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced: bool,
}

/// Beam-decodes one clip, conditioning on `tags` when given.
pub fn caption_clip(model: &CaptionModel, clip_id: &str, mel: &MelSpectrogram, tags: Option<&[usize]>, beam_size: usize) -> Result<GeneratedCaption> {
    let mut scorer = ClipScorer { model, memory: model.encode_memory(mel)?, tags: tags.map(|t| t.to_vec()) };
    let best = beam_search(&mut scorer, BeamConfig { beam_size, max_len: model.cfg.max_len, eos: EOS })?;
    Ok(GeneratedCaption {
        clip_id: clip_id.into(),
        caption: detokenize(&best.tokens, &model.vocab),
        score: best.score,
        forced: !best.finished,
    })
}

pub fn write_captions(path: impl AsRef<Path>, captions: &[GeneratedCaption]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for c in captions {
        serde_json::to_writer(&mut out, c)?;
        out.push(b'\n');
    }
    std::fs::File::create(path).and_then(|mut f| f.write_all(&out)).map_err(|e| Error::file(path, e))
}

pub fn read_captions(path: impl AsRef<Path>) -> Result<Vec<GeneratedCaption>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

pub fn checkpoint_bytes(model: &CaptionModel, stage: &str) -> Result<Vec<u8>> {
    checkpoint::encode(MODEL_KIND, stage, serde_json::to_value(&model.cfg)?, model.vocab.tokens(), &model.tags, &model.params)
}

pub fn save_checkpoint(model: &CaptionModel, stage: &str, path: impl AsRef<Path>) -> Result<String> {
    let bytes = checkpoint_bytes(model, stage)?;
    checkpoint::write(path, &bytes)?;
    Ok(checkpoint::sha256_hex(&bytes))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CaptionModel> {
    let loaded = checkpoint::read(path)?;
    let m = &loaded.manifest;
    if m.model != MODEL_KIND {
        return Err(Error::Checkpoint(format!("expected a {MODEL_KIND} checkpoint, found `{}`", m.model)));
    }
    let cfg: CaptionModelConfig =
        serde_json::from_value(m.config.clone()).map_err(|e| Error::Checkpoint(format!("stored captioner config is invalid: {e}")))?;
    let mut model = CaptionModel::new(&cfg, Vocabulary::from_tokens(m.vocab.clone())?, m.tags.clone(), 0)?;
    checkpoint::restore(&loaded, &mut model.params)?;
    Ok(model)
}
