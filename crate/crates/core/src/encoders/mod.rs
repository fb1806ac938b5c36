//! Audio and text encoders mapping into a shared embedding space, plus the
//! learnable contrastive temperature.

mod audio;
mod text;

pub use audio::{AudioEncoder, AudioEncoderConfig};
pub use text::{TextEncoder, TextEncoderConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audiofront::{AudioClip, FrontendConfig, MelFrontend, MelSpectrogram};
use crate::diffcore::{Ctx, Mode, ParamKind, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::textproc::{tokenize, Vocabulary};

pub const LOG_TEMPERATURE: &str = "log_temperature";

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiEncoderConfig {
    pub sample_rate: u32,
    pub frontend: FrontendConfig,
    pub audio: AudioEncoderConfig,
    pub text: TextEncoderConfig,
    pub embed_dim: usize,
    pub init_temperature: f64,
    pub min_temperature: f64,
    /// Items per forward pass during inference.
    pub inference_batch: usize,
}

impl Default for BiEncoderConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            frontend: FrontendConfig::default(),
            audio: AudioEncoderConfig::default(),
            text: TextEncoderConfig::default(),
            embed_dim: 128,
            init_temperature: 0.07,
            min_temperature: 1e-3,
            inference_batch: 64,
        }
    }
}

/// Anything that embeds spectrograms and texts into one space.
pub trait BiEncoder {
    fn embed_audio(&self, mels: &[&MelSpectrogram]) -> Result<Tensor>;
    fn embed_text(&self, texts: &[String]) -> Result<Tensor>;
}

/// Audio encoder, text encoder, temperature, and the vocabulary and
/// frontend they were built for.
#[derive(Clone, Debug)]
pub struct BiEncoderModel {
    pub cfg: BiEncoderConfig,
    pub vocab: Vocabulary,
    pub audio: AudioEncoder,
    pub text: TextEncoder,
    pub params: ParamStore,
}

impl BiEncoderModel {
    /// Architecture only; parameters are empty until [`init`](Self::init)
    /// or a checkpoint load.
    pub fn architecture(cfg: &BiEncoderConfig, vocab: Vocabulary) -> Result<Self> {
        cfg.frontend.validate(cfg.sample_rate)?;
        if cfg.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if !(cfg.init_temperature >= cfg.min_temperature && cfg.min_temperature > 0.0) {
            return Err(Error::Config("need 0 < min_temperature <= init_temperature".into()));
        }
        let audio = AudioEncoder::new(&cfg.audio, cfg.frontend.mel_bins, cfg.embed_dim)?;
        let text = TextEncoder::new(&cfg.text, vocab.len(), cfg.embed_dim)?;
        Ok(Self { cfg: cfg.clone(), vocab, audio, text, params: ParamStore::new() })
    }

    pub fn new(cfg: &BiEncoderConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut m = Self::architecture(cfg, vocab)?;
        m.init(seed)?;
        Ok(m)
    }

    fn init(&mut self, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.audio.init(&mut store, &mut rng)?;
        self.text.init(&mut store, &mut rng)?;
        store.add(LOG_TEMPERATURE, Tensor::vector(vec![self.cfg.init_temperature.ln()]), ParamKind::Trainable)?;
        self.params = store;
        Ok(())
    }

    pub fn frontend(&self) -> Result<MelFrontend> {
        MelFrontend::new(&self.cfg.frontend, self.cfg.sample_rate)
    }

    pub fn frontend_fingerprint(&self) -> [u8; 32] {
        self.cfg.frontend.fingerprint(self.cfg.sample_rate)
    }

    pub fn temperature(&self) -> f64 {
        self.params.value(LOG_TEMPERATURE).map(|t| t.data()[0].exp()).unwrap_or(f64::NAN)
    }

    /// Raises the temperature to its floor if an update pushed it lower.
    pub fn clamp_temperature(&mut self) -> Result<()> {
        let floor = self.cfg.min_temperature.ln();
        let p = self.params.get_mut(LOG_TEMPERATURE).ok_or_else(|| Error::Lookup(LOG_TEMPERATURE.into()))?;
        let v = &mut p.value.data_mut()[0];
        *v = v.max(floor);
        Ok(())
    }

    pub fn check_features(&self, mels: &[&MelSpectrogram]) -> Result<()> {
        let fp = self.frontend_fingerprint();
        match mels.iter().find(|m| m.config_fingerprint != fp) {
            Some(m) => Err(Error::Config(format!(
                "spectrogram fingerprint {} does not match the model's frontend {}",
                &m.fingerprint_hex()[..12],
                &hex::encode(fp)[..12]
            ))),
            None => Ok(()),
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        tokenize(text, &self.vocab)
    }

    pub fn features(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        self.frontend()?.compute(clip)
    }

    /// Single-clip embedding in inference mode.
    pub fn encode_audio(&self, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        Ok(self.embed_audio(&[mel])?.into_data())
    }

    pub fn encode_text(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        Ok(self.embed_tokens(&[tokens.to_vec()])?.into_data())
    }

    pub fn embed_tokens(&self, seqs: &[Vec<usize>]) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(seqs.len() * self.cfg.embed_dim);
        for chunk in seqs.chunks(self.cfg.inference_batch.max(1)) {
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &self.params, Mode::Eval);
            rows.extend_from_slice(self.text.forward(&ctx, chunk)?.value().data());
        }
        Tensor::new(vec![seqs.len(), self.cfg.embed_dim], rows)
    }
}

impl BiEncoder for BiEncoderModel {
    fn embed_audio(&self, mels: &[&MelSpectrogram]) -> Result<Tensor> {
        self.check_features(mels)?;
        let mut rows = Vec::with_capacity(mels.len() * self.cfg.embed_dim);
        for chunk in mels.chunks(self.cfg.inference_batch.max(1)) {
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &self.params, Mode::Eval);
            rows.extend_from_slice(self.audio.forward(&ctx, chunk)?.value().data());
        }
        Tensor::new(vec![mels.len(), self.cfg.embed_dim], rows)
    }

    fn embed_text(&self, texts: &[String]) -> Result<Tensor> {
        let seqs: Vec<Vec<usize>> = texts.iter().map(|t| self.tokenize(t)).collect();
        self.embed_tokens(&seqs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiofront::AudioClip;
    use crate::textproc::{build_vocab, PAD};
    use crate::toygen::{default_registry, synth_event};

    fn small_cfg() -> BiEncoderConfig {
        BiEncoderConfig {
            frontend: FrontendConfig { win: 1024, hop: 640, n_fft: 1024, mel_bins: 16, fmin: 50.0, fmax: 8000.0, floor_eps: 1e-10 },
            audio: AudioEncoderConfig { channels: vec![4, 4, 8, 8, 8], pool_every: 2 },
            text: TextEncoderConfig { width: 16, layers: 2, heads: 2, ff_hidden: 32, max_tokens: 12 },
            embed_dim: 8,
            ..BiEncoderConfig::default()
        }
    }

    fn model() -> BiEncoderModel {
        let vocab = build_vocab(&["a low tone then white noise", "a high tone"], 1).unwrap();
        BiEncoderModel::new(&small_cfg(), vocab, 11).unwrap()
    }

    fn mel_of(m: &BiEncoderModel, event: &str, seed: u64) -> MelSpectrogram {
        let reg = default_registry();
        m.features(&synth_event(reg.get(event).unwrap(), 16000, seed).unwrap()).unwrap()
    }

    #[test]
    fn audio_embeddings_are_deterministic_and_distinct() {
        let m = model();
        let a = mel_of(&m, "low_tone", 1);
        let b = mel_of(&m, "white_noise", 2);
        let ea = m.encode_audio(&a).unwrap();
        assert_eq!(ea.len(), 8);
        assert_eq!(ea, m.encode_audio(&a).unwrap());
        let eb = m.encode_audio(&b).unwrap();
        let cos = crate::diffcore::ops::dot(&ea, &eb)
            / (crate::diffcore::ops::dot(&ea, &ea).sqrt() * crate::diffcore::ops::dot(&eb, &eb).sqrt());
        assert!(cos > -1.0 && cos < 1.0, "{cos}");
    }

    #[test]
    fn audio_batching_matches_single_calls() {
        let m = model();
        let mels: Vec<MelSpectrogram> =
            ["low_tone", "white_noise", "rising_whistle"].iter().enumerate().map(|(i, e)| mel_of(&m, e, i as u64)).collect();
        let refs: Vec<&MelSpectrogram> = mels.iter().collect();
        let batch = m.embed_audio(&refs).unwrap();
        for (i, mel) in mels.iter().enumerate() {
            let single = m.encode_audio(mel).unwrap();
            for (x, y) in batch.row(i).iter().zip(&single) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
        let rev: Vec<&MelSpectrogram> = mels.iter().rev().collect();
        let shuffled = m.embed_audio(&rev).unwrap();
        for i in 0..3 {
            for (x, y) in shuffled.row(i).iter().zip(batch.row(2 - i)) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn foreign_features_and_tiny_clips_are_rejected() {
        let m = model();
        let clip = AudioClip::new("c", 16000, vec![0.1; 8000]).unwrap();
        let other = crate::audiofront::logmel(&clip, &FrontendConfig { mel_bins: 16, ..FrontendConfig::default() }).unwrap();
        assert!(matches!(m.encode_audio(&other), Err(Error::Config(_))));
        let short = m.features(&AudioClip::new("s", 16000, vec![0.1; 1500]).unwrap()).unwrap();
        assert_eq!(short.n_frames, 3);
        assert!(matches!(m.encode_audio(&short), Err(Error::Degenerate(_))));
    }

    #[test]
    fn text_padding_is_masked_and_order_matters() {
        let m = model();
        let t = m.tokenize("a low tone");
        let e = m.encode_text(&t).unwrap();
        assert_eq!(e, m.encode_text(&t).unwrap());
        let mut padded = t.clone();
        padded.extend([PAD, PAD, PAD]);
        let ep = m.encode_text(&padded).unwrap();
        for (x, y) in e.iter().zip(&ep) {
            assert!((x - y).abs() <= 1e-9);
        }
        let rev: Vec<usize> = t.iter().rev().copied().collect();
        assert_ne!(e, m.encode_text(&rev).unwrap());
        assert!(matches!(m.encode_text(&[]), Err(Error::Degenerate(_))));
        assert!(matches!(m.encode_text(&[PAD]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn text_batching_matches_single_calls() {
        let m = model();
        let texts: Vec<String> = ["a high tone", "white noise then a low tone", "tone"].iter().map(|s| s.to_string()).collect();
        let batch = m.embed_text(&texts).unwrap();
        for (i, t) in texts.iter().enumerate() {
            let single = m.encode_text(&m.tokenize(t)).unwrap();
            for (x, y) in batch.row(i).iter().zip(&single) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn temperature_starts_at_init_and_clamps() {
        let mut m = model();
        assert!((m.temperature() - 0.07).abs() < 1e-12);
        m.params.set_value(LOG_TEMPERATURE, Tensor::vector(vec![-20.0])).unwrap();
        m.clamp_temperature().unwrap();
        assert!((m.temperature() - 1e-3).abs() < 1e-15);
    }
}
