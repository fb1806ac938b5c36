use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::beam::StepScorer;
use crate::audiofront::{FrontendConfig, MelSpectrogram};
use crate::diffcore::layers::{BatchNorm, BiGru, Embedding, LayerNorm, Linear, TransformerBlock};
use crate::diffcore::{concat_rows, AttentionSpec, Ctx, Mode, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::textproc::{Vocabulary, BOS, EOS, PAD};

pub const TAG_TABLE: &str = "cap.tags.table";

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptionModelConfig {
    pub sample_rate: u32,
    pub frontend: FrontendConfig,
    /// Consecutive spectrogram frames averaged into one encoder step.
    pub frame_pool: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub decoder_layers: usize,
    /// Longest caption in tokens, end token included.
    pub max_len: usize,
    /// When false the tag table is zero and frozen, which makes the model
    /// identical to one without tag input.
    pub tag_guidance: bool,
}

impl Default for CaptionModelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            frontend: FrontendConfig::default(),
            frame_pool: 1,
            gru_hidden: 128,
            gru_layers: 3,
            width: 256,
            heads: 4,
            ff_hidden: 512,
            decoder_layers: 2,
            max_len: 20,
            tag_guidance: true,
        }
    }
}

/// Mean of the tag-table rows for `tag_ids`.
pub fn fuse_tag_embedding(tag_ids: &[usize], table: &Tensor) -> Result<Vec<f64>> {
    if tag_ids.is_empty() {
        return Err(Error::Degenerate("tag fusion needs at least one tag".into()));
    }
    let mut acc = vec![0.0; table.cols()];
    for &t in tag_ids {
        if t >= table.rows() {
            return Err(Error::Lookup(format!("tag index {t} outside table of {} rows", table.rows())));
        }
        acc.iter_mut().zip(table.row(t)).for_each(|(a, v)| *a += v);
    }
    let m = tag_ids.len() as f64;
    Ok(acc.into_iter().map(|v| v / m).collect())
}

/// Bidirectional GRU audio encoder, tag-fused transformer decoder.
#[derive(Clone, Debug)]
pub struct CaptionModel {
    pub cfg: CaptionModelConfig,
    pub vocab: Vocabulary,
    /// Tag-table row names, sorted.
    pub tags: Vec<String>,
    pub params: ParamStore,
    input_norm: BatchNorm,
    encoder: BiGru,
    memory_proj: Linear,
    words: Embedding,
    tag_table: Embedding,
    positions: Embedding,
    blocks: Vec<TransformerBlock>,
    out_norm: LayerNorm,
    output: Linear,
}

/// Audio memory for a batch of clips: `[sum(lens), width]`.
pub struct Memory<'a> {
    pub rows: Var<'a>,
    pub lens: Vec<usize>,
}

impl CaptionModel {
    pub fn architecture(cfg: &CaptionModelConfig, vocab: Vocabulary, tags: Vec<String>) -> Result<Self> {
        cfg.frontend.validate(cfg.sample_rate)?;
        if cfg.width == 0 || cfg.heads == 0 || cfg.width % cfg.heads != 0 {
            return Err(Error::Config(format!("captioner width {} must be a positive multiple of heads {}", cfg.width, cfg.heads)));
        }
        if cfg.frame_pool == 0 || cfg.gru_hidden == 0 || cfg.gru_layers == 0 || cfg.max_len < 2 {
            return Err(Error::Config("captioner needs frame_pool, gru sizes >= 1 and max_len >= 2".into()));
        }
        let sorted: BTreeSet<&String> = tags.iter().collect();
        if tags.is_empty() || sorted.len() != tags.len() || !sorted.iter().copied().eq(tags.iter()) {
            return Err(Error::Config("captioner tag list must be non-empty, sorted and distinct".into()));
        }
        let bins = cfg.frontend.mel_bins;
        let gru = BiGru::new("cap.encoder", bins, cfg.gru_hidden, cfg.gru_layers);
        Ok(Self {
            input_norm: BatchNorm::new("cap.input_bn", bins),
            memory_proj: Linear::new("cap.memory", gru.output_dim(), cfg.width),
            encoder: gru,
            words: Embedding::new("cap.words", vocab.len(), cfg.width),
            tag_table: Embedding::new("cap.tags", tags.len(), cfg.width),
            positions: Embedding::new("cap.positions", cfg.max_len, cfg.width),
            blocks: (0..cfg.decoder_layers)
                .map(|i| TransformerBlock::new(format!("cap.decoder{i}"), cfg.width, cfg.heads, cfg.ff_hidden, true))
                .collect(),
            out_norm: LayerNorm::new("cap.out_norm", cfg.width),
            output: Linear::new("cap.output", cfg.width, vocab.len()),
            cfg: cfg.clone(),
            vocab,
            tags,
            params: ParamStore::new(),
        })
    }

    pub fn new(cfg: &CaptionModelConfig, vocab: Vocabulary, tags: Vec<String>, seed: u64) -> Result<Self> {
        let mut m = Self::architecture(cfg, vocab, tags)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        m.input_norm.init(&mut store)?;
        m.encoder.init(&mut store, &mut rng)?;
        m.memory_proj.init(&mut store, &mut rng)?;
        m.words.init(&mut store, &mut rng)?;
        m.tag_table.init(&mut store, &mut rng)?;
        m.positions.init(&mut store, &mut rng)?;
        for b in &m.blocks {
            b.init(&mut store, &mut rng)?;
        }
        m.out_norm.init(&mut store)?;
        m.output.init(&mut store, &mut rng)?;
        if !cfg.tag_guidance {
            store.set_value(TAG_TABLE, Tensor::zeros(&[m.tags.len(), cfg.width]))?;
            store.set_frozen(TAG_TABLE, true);
        }
        m.params = store;
        Ok(m)
    }

    /// Table rows for a clip's tags.
    pub fn tag_ids(&self, tags: &BTreeSet<String>) -> Result<Vec<usize>> {
        if tags.is_empty() {
            return Err(Error::Degenerate("clip has no tags to fuse".into()));
        }
        tags.iter()
            .map(|t| self.tags.binary_search(t).map_err(|_| Error::Lookup(format!("unknown tag `{t}`"))))
            .collect()
    }

    pub fn frontend_fingerprint(&self) -> [u8; 32] {
        self.cfg.frontend.fingerprint(self.cfg.sample_rate)
    }

    fn pooled_frames(&self, mel: &MelSpectrogram) -> Result<(usize, Vec<f64>)> {
        if mel.config_fingerprint != self.frontend_fingerprint() {
            return Err(Error::Config("spectrogram was computed with a different frontend than the captioner's".into()));
        }
        let (k, f) = (self.cfg.frame_pool, mel.mel_bins);
        let steps = mel.n_frames.div_ceil(k);
        let mut out = Vec::with_capacity(steps * f);
        for s in 0..steps {
            let frames = (s * k..((s + 1) * k).min(mel.n_frames)).map(|t| mel.frame(t)).collect::<Vec<_>>();
            let n = frames.len() as f64;
            out.extend((0..f).map(|j| frames.iter().map(|fr| fr[j]).sum::<f64>() / n));
        }
        Ok((steps, out))
    }

    /// Encodes each clip into a sequence of `width`-dimensional memory rows.
    pub fn encode<'a>(&self, ctx: &Ctx<'a, '_>, mels: &[&MelSpectrogram]) -> Result<Memory<'a>> {
        if mels.is_empty() {
            return Err(Error::Input("captioner called with an empty batch".into()));
        }
        let bins = self.cfg.frontend.mel_bins;
        let mut lens = Vec::with_capacity(mels.len());
        let mut data = Vec::new();
        for m in mels {
            if m.mel_bins != bins {
                return Err(Error::dim("captioner", format!("expected {bins} mel bins (axis 1), got {}", m.mel_bins)));
            }
            let (steps, frames) = self.pooled_frames(m)?;
            lens.push(steps);
            data.extend(frames);
        }
        let total: usize = lens.iter().sum();
        let x = ctx.tape.constant(Tensor::new(vec![total, bins], data)?);
        let x = self.input_norm.forward(ctx, x)?;
        let padded = concat_rows(&[x, ctx.tape.constant(Tensor::zeros(&[1, bins]))]);
        let (batch, steps) = (lens.len(), *lens.iter().max().expect("non-empty"));
        let offsets: Vec<usize> = lens.iter().scan(0, |o, &l| Some(std::mem::replace(o, *o + l))).collect();
        let time_major: Vec<usize> =
            (0..steps).flat_map(|t| (0..batch).map(move |b| (t, b))).map(|(t, b)| if t < lens[b] { offsets[b] + t } else { total }).collect();
        let h = self.encoder.forward(ctx, padded.gather_rows(&time_major), &lens)?;
        let clip_major: Vec<usize> = (0..batch).flat_map(|b| (0..lens[b]).map(move |t| t * batch + b)).collect();
        let rows = self.memory_proj.forward(ctx, h.gather_rows(&clip_major))?;
        Ok(Memory { rows, lens })
    }

    /// Next-token logits for every position of every input sequence,
    /// `[sum(len), vocab]`. Sequence `s` starts with `<BOS>`, attends to
    /// memory segment `memory_of[s]`, and when `tags` is given has the mean
    /// of its tag rows added to every input embedding.
    pub fn decode<'a>(
        &self,
        ctx: &Ctx<'a, '_>,
        memory: &Memory<'a>,
        memory_of: &[usize],
        inputs: &[Vec<usize>],
        tags: Option<&[Vec<usize>]>,
    ) -> Result<Var<'a>> {
        if inputs.is_empty() || memory_of.len() != inputs.len() || tags.is_some_and(|t| t.len() != inputs.len()) {
            return Err(Error::Input("decoder inputs, memory indices and tag lists must align".into()));
        }
        let mem_off: Vec<usize> = memory.lens.iter().scan(0, |o, &l| Some(std::mem::replace(o, *o + l))).collect();
        let (mut ids, mut pos, mut owner) = (Vec::new(), Vec::new(), Vec::new());
        let (mut self_segs, mut cross_segs) = (Vec::new(), Vec::new());
        for (s, seq) in inputs.iter().enumerate() {
            if seq.first() != Some(&BOS) {
                return Err(Error::Input("decoder input must start with <BOS>".into()));
            }
            if seq.contains(&PAD) {
                return Err(Error::Input("decoder input contains <PAD>".into()));
            }
            if seq.len() > self.cfg.max_len {
                return Err(Error::Input(format!("decoder input of {} tokens exceeds max_len {}", seq.len(), self.cfg.max_len)));
            }
            let m = *memory_of.get(s).filter(|&&m| m < memory.lens.len()).ok_or_else(|| Error::Input("memory index out of range".into()))?;
            let off = ids.len();
            self_segs.push((off, seq.len(), off, seq.len()));
            cross_segs.push((off, seq.len(), mem_off[m], memory.lens[m]));
            ids.extend_from_slice(seq);
            pos.extend(0..seq.len());
            owner.extend(std::iter::repeat_n(s, seq.len()));
        }
        let mut x = self.words.forward(ctx, &ids)?;
        if let Some(tags) = tags {
            let flat: Vec<usize> = tags.iter().flatten().copied().collect();
            if tags.iter().any(|t| t.is_empty()) {
                return Err(Error::Degenerate("tag fusion needs at least one tag".into()));
            }
            let sizes: Vec<usize> = tags.iter().map(|t| t.len()).collect();
            let fused = self.tag_table.forward(ctx, &flat)?.segment_mean(&sizes);
            x = x.add(fused.gather_rows(&owner));
        }
        x = x.add(self.positions.forward(ctx, &pos)?);
        let heads = self.cfg.heads;
        let self_spec = AttentionSpec { segments: self_segs, key_mask: None, causal: true, heads };
        let cross_spec = AttentionSpec { segments: cross_segs, key_mask: None, causal: false, heads };
        for b in &self.blocks {
            x = b.forward(ctx, x, &self_spec, Some((memory.rows, &cross_spec)))?;
        }
        self.output.forward(ctx, self.out_norm.forward(ctx, x)?)
    }

    /// Inference-mode memory for one clip.
    pub fn encode_memory(&self, mel: &MelSpectrogram) -> Result<Tensor> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params, Mode::Eval);
        let m = self.encode(&ctx, &[mel])?;
        Ok(m.rows.value().as_ref().clone())
    }

    /// Log-probabilities of the next token after each prefix (all starting
    /// with `<BOS>`), sharing one clip memory.
    pub fn next_log_probs(&self, memory: &Tensor, prefixes: &[Vec<usize>], tags: Option<&[usize]>) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params, Mode::Eval);
        let mem = Memory { rows: tape.constant(memory.clone()), lens: vec![memory.rows()] };
        let tag_lists: Option<Vec<Vec<usize>>> = tags.map(|t| vec![t.to_vec(); prefixes.len()]);
        let logits = self.decode(&ctx, &mem, &vec![0; prefixes.len()], prefixes, tag_lists.as_deref())?;
        let mut last = Vec::with_capacity(prefixes.len());
        let mut end = 0;
        for p in prefixes {
            end += p.len();
            last.push(end - 1);
        }
        let lp = logits.gather_rows(&last).log_softmax().value();
        Ok((0..prefixes.len()).map(|i| lp.row(i).to_vec()).collect())
    }
}

/// Next-token distribution `p_t` after `prefix`.
pub fn decode_step(model: &CaptionModel, memory: &Tensor, prefix: &[usize], tags: Option<&[usize]>) -> Result<Vec<f64>> {
    let lp = model.next_log_probs(memory, &[prefix.to_vec()], tags)?;
    Ok(lp[0].iter().map(|v| v.exp()).collect())
}

/// Beam-search adapter for one clip. `<PAD>` and `<BOS>` are never
/// proposed, and `<EOS>` not as the first token, so captions are non-empty.
pub struct ClipScorer<'m> {
    pub model: &'m CaptionModel,
    pub memory: Tensor,
    pub tags: Option<Vec<usize>>,
}

impl StepScorer for ClipScorer<'_> {
    fn log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let full: Vec<Vec<usize>> = prefixes.iter().map(|p| std::iter::once(BOS).chain(p.iter().copied()).collect()).collect();
        let mut rows = self.model.next_log_probs(&self.memory, &full, self.tags.as_deref())?;
        for (r, p) in rows.iter_mut().zip(prefixes) {
            if p.is_empty() {
                r[EOS] = f64::NEG_INFINITY;
            }
            r[PAD] = f64::NEG_INFINITY;
            r[BOS] = f64::NEG_INFINITY;
        }
        Ok(rows)
    }
}
