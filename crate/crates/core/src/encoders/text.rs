use rand::Rng;

use crate::diffcore::layers::{Embedding, LayerNorm, Linear, TransformerBlock};
use crate::diffcore::{AttentionSpec, Ctx, ParamStore, Var};
use crate::error::{Error, Result};
use crate::textproc::{BOS, PAD};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextEncoderConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    /// Longer inputs are truncated.
    pub max_tokens: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self { width: 128, layers: 2, heads: 4, ff_hidden: 256, max_tokens: 32 }
    }
}

/// Token plus learned position embeddings, a summary token in front,
/// pre-norm transformer blocks, and a projection of the summary state.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub cfg: TextEncoderConfig,
    pub vocab_size: usize,
    pub embed_dim: usize,
    tokens: Embedding,
    positions: Embedding,
    blocks: Vec<TransformerBlock>,
    out_norm: LayerNorm,
    proj: Linear,
}

impl TextEncoder {
    pub fn new(cfg: &TextEncoderConfig, vocab_size: usize, embed_dim: usize) -> Result<Self> {
        if cfg.width == 0 || cfg.heads == 0 || cfg.width % cfg.heads != 0 || cfg.max_tokens == 0 {
            return Err(Error::Config(format!(
                "text encoder: width {} must be a positive multiple of heads {}, max_tokens positive",
                cfg.width, cfg.heads
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            vocab_size,
            embed_dim,
            tokens: Embedding::new("text.tokens", vocab_size, cfg.width),
            positions: Embedding::new("text.positions", cfg.max_tokens + 1, cfg.width),
            blocks: (0..cfg.layers)
                .map(|i| TransformerBlock::new(format!("text.block{i}"), cfg.width, cfg.heads, cfg.ff_hidden, false))
                .collect(),
            out_norm: LayerNorm::new("text.out_norm", cfg.width),
            proj: Linear::new("text.proj", cfg.width, embed_dim),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.tokens.init(store, rng)?;
        self.positions.init(store, rng)?;
        for b in &self.blocks {
            b.init(store, rng)?;
        }
        self.out_norm.init(store)?;
        self.proj.init(store, rng)
    }

    /// Embeddings `[seqs.len(), embed_dim]`. `<PAD>` tokens are masked out
    /// of attention.
    pub fn forward<'a>(&self, ctx: &Ctx<'a, '_>, seqs: &[Vec<usize>]) -> Result<Var<'a>> {
        if seqs.is_empty() {
            return Err(Error::Input("text encoder called with an empty batch".into()));
        }
        let mut ids = Vec::new();
        let mut pos = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        let mut starts = Vec::with_capacity(seqs.len());
        for s in seqs {
            let s = &s[..s.len().min(self.cfg.max_tokens)];
            if s.iter().all(|&t| t == PAD) {
                return Err(Error::Degenerate("text encoder needs at least one non-padding token".into()));
            }
            let off = ids.len();
            starts.push(off);
            segments.push((off, s.len() + 1, off, s.len() + 1));
            ids.push(BOS);
            ids.extend_from_slice(s);
            pos.extend(0..=s.len());
        }
        let mask = ids.iter().map(|&t| t != PAD).collect();
        let spec = AttentionSpec { segments, key_mask: Some(mask), causal: false, heads: self.cfg.heads };
        let mut x = self.tokens.forward(ctx, &ids)?.add(self.positions.forward(ctx, &pos)?);
        for b in &self.blocks {
            x = b.forward(ctx, x, &spec, None)?;
        }
        let summary = self.out_norm.forward(ctx, x.gather_rows(&starts))?;
        self.proj.forward(ctx, summary)
    }
}
