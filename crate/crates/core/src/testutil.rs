//! Small shared fixtures for unit tests.

use std::sync::Arc;

use crate::audiofront::{FrontendConfig, MelSpectrogram};
use crate::contrastive::PairSet;
use crate::encoders::{AudioEncoderConfig, BiEncoderConfig, BiEncoderModel, TextEncoderConfig};
use crate::textproc::{build_vocab, Vocabulary};
use crate::toygen::{default_registry, synth_event};

pub fn tiny_frontend() -> FrontendConfig {
    FrontendConfig { win: 1024, hop: 640, n_fft: 1024, mel_bins: 16, fmin: 50.0, fmax: 8000.0, floor_eps: 1e-10 }
}

pub fn tiny_biencoder_cfg() -> BiEncoderConfig {
    BiEncoderConfig {
        frontend: tiny_frontend(),
        audio: AudioEncoderConfig { channels: vec![4, 4, 8, 8, 8], pool_every: 2 },
        text: TextEncoderConfig { width: 16, layers: 2, heads: 2, ff_hidden: 32, max_tokens: 12 },
        embed_dim: 8,
        ..BiEncoderConfig::default()
    }
}

pub const EVENTS: [&str; 4] = ["low_tone", "white_noise", "rising_whistle", "deep_buzz"];

pub fn event_vocab() -> Vocabulary {
    let reg = default_registry();
    let texts: Vec<String> = EVENTS.iter().map(|e| reg.get(e).unwrap().label_text()).collect();
    build_vocab(&texts, 1).unwrap()
}

pub fn event_mel(model: &BiEncoderModel, event: &str, seed: u64) -> MelSpectrogram {
    let reg = default_registry();
    model.features(&synth_event(reg.get(event).unwrap(), 16000, seed).unwrap()).unwrap()
}

/// `per_event` single-event clips per event paired with the label text.
pub fn event_pairs(model: &BiEncoderModel, per_event: usize, seed: u64) -> PairSet {
    let reg = default_registry();
    let mut set = PairSet::default();
    for k in 0..per_event {
        for (i, e) in EVENTS.iter().enumerate() {
            let mel = event_mel(model, e, seed * 1000 + (k * EVENTS.len() + i) as u64);
            set.push(format!("{e}-{k}"), Arc::new(mel), model.tokenize(&reg.get(e).unwrap().label_text()));
        }
    }
    set
}

pub fn tiny_caption_cfg() -> crate::captioner::CaptionModelConfig {
    crate::captioner::CaptionModelConfig {
        frontend: tiny_frontend(),
        frame_pool: 2,
        gru_hidden: 8,
        gru_layers: 3,
        width: 16,
        heads: 2,
        ff_hidden: 32,
        decoder_layers: 2,
        max_len: 12,
        ..Default::default()
    }
}
