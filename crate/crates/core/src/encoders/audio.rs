use rand::Rng;

use crate::audiofront::MelSpectrogram;
use crate::diffcore::layers::{BatchNorm, Conv3x3, Linear};
use crate::diffcore::{Ctx, MapLayout, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioEncoderConfig {
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
    /// A 2x2 max pool follows every `pool_every` blocks, except the last.
    pub pool_every: usize,
}

impl Default for AudioEncoderConfig {
    fn default() -> Self {
        Self { channels: vec![16, 32, 64, 128, 256, 256], pool_every: 2 }
    }
}

impl AudioEncoderConfig {
    pub fn pools(&self) -> usize {
        if self.pool_every == 0 {
            return 0;
        }
        (self.channels.len().saturating_sub(1)) / self.pool_every
    }

    /// Smallest time or frequency extent that survives every pooling step.
    pub fn min_extent(&self) -> usize {
        1 << self.pools()
    }
}

/// Conv blocks (conv, batch norm, ReLU) with periodic pooling, then mean
/// plus max pooling over the whole map and a linear projection.
#[derive(Clone, Debug)]
pub struct AudioEncoder {
    pub cfg: AudioEncoderConfig,
    pub mel_bins: usize,
    pub embed_dim: usize,
    input_norm: BatchNorm,
    convs: Vec<Conv3x3>,
    norms: Vec<BatchNorm>,
    proj: Linear,
}

impl AudioEncoder {
    pub fn new(cfg: &AudioEncoderConfig, mel_bins: usize, embed_dim: usize) -> Result<Self> {
        if cfg.channels.is_empty() || cfg.channels.contains(&0) {
            return Err(Error::Config("audio encoder needs non-zero channel widths".into()));
        }
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut cin = 1;
        for (i, &c) in cfg.channels.iter().enumerate() {
            convs.push(Conv3x3::new(format!("audio.block{i}.conv"), cin, c));
            norms.push(BatchNorm::new(format!("audio.block{i}.bn"), c));
            cin = c;
        }
        Ok(Self {
            cfg: cfg.clone(),
            mel_bins,
            embed_dim,
            input_norm: BatchNorm::new("audio.input_bn", mel_bins),
            convs,
            norms,
            proj: Linear::new("audio.proj", cin, embed_dim),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.input_norm.init(store)?;
        for (c, n) in self.convs.iter().zip(&self.norms) {
            c.init(store, rng)?;
            n.init(store)?;
        }
        self.proj.init(store, rng)
    }

    /// Embeddings `[mels.len(), embed_dim]` for a ragged batch.
    pub fn forward<'a>(&self, ctx: &Ctx<'a, '_>, mels: &[&MelSpectrogram]) -> Result<Var<'a>> {
        if mels.is_empty() {
            return Err(Error::Input("audio encoder called with an empty batch".into()));
        }
        let min = self.cfg.min_extent();
        let mut dims = Vec::with_capacity(mels.len());
        let mut data = Vec::with_capacity(mels.iter().map(|m| m.frames.len()).sum());
        for m in mels {
            if m.mel_bins != self.mel_bins {
                return Err(Error::dim("audio encoder", format!("expected {} mel bins (axis 1), got {}", self.mel_bins, m.mel_bins)));
            }
            if m.n_frames < min || m.mel_bins < min {
                return Err(Error::Degenerate(format!(
                    "{}x{} spectrogram is too small for {} pooling steps (needs {min}x{min})",
                    m.n_frames,
                    m.mel_bins,
                    self.cfg.pools()
                )));
            }
            dims.push((m.n_frames, m.mel_bins));
            data.extend_from_slice(&m.frames);
        }
        let frames: usize = dims.iter().map(|d| d.0).sum();
        let x = ctx.tape.constant(Tensor::new(vec![frames, self.mel_bins], data)?);
        let mut x = self.input_norm.forward(ctx, x)?.reshape(&[frames * self.mel_bins, 1]);
        let mut layout = MapLayout::new(dims);
        let last = self.convs.len() - 1;
        for (i, (conv, norm)) in self.convs.iter().zip(&self.norms).enumerate() {
            x = norm.forward(ctx, conv.forward(ctx, x, &layout)?)?.relu();
            if self.cfg.pool_every > 0 && (i + 1) % self.cfg.pool_every == 0 && i < last {
                x = x.max_pool2x2(&layout);
                layout = layout.pooled();
            }
        }
        let sizes = layout.sizes();
        let pooled = x.segment_mean(&sizes).add(x.segment_max(&sizes));
        self.proj.forward(ctx, pooled)
    }
}
