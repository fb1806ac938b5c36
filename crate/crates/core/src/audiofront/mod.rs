//! Waveform I/O and log-mel feature extraction.

mod cache;
mod mel;
mod wav;

pub use cache::{load_features, load_if_current, save_features};
pub use mel::{hz_to_mel, logmel, mel_bands, mel_to_hz, FrontendConfig, MelBand, MelFrontend, MelSpectrogram};
pub use wav::{load_wav, write_wav, AudioClip};
