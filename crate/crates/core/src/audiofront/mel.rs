use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use sha2::{Digest, Sha256};

use super::wav::AudioClip;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// STFT and mel filterbank parameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendConfig {
    pub win: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub floor_eps: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self { win: 512, hop: 160, n_fft: 512, mel_bins: 64, fmin: 50.0, fmax: 8000.0, floor_eps: 1e-10 }
    }
}

impl FrontendConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        if self.win == 0 || self.hop == 0 || self.mel_bins == 0 {
            return Err(Error::Config("frontend: win, hop and mel_bins must be positive".into()));
        }
        if self.win > self.n_fft {
            return Err(Error::Config(format!("frontend: win {} exceeds n_fft {}", self.win, self.n_fft)));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::Config(format!(
                "frontend: need 0 <= fmin < fmax <= {nyquist}, got fmin {} fmax {}",
                self.fmin, self.fmax
            )));
        }
        if !(self.floor_eps > 0.0) {
            return Err(Error::Config("frontend: floor_eps must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the parameters and sample rate.
    pub fn fingerprint(&self, sample_rate: u32) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update(sample_rate.to_le_bytes());
        h.finalize().into()
    }

    /// Frames produced for `samples` samples under center padding.
    pub fn frame_count(&self, samples: usize) -> usize {
        1 + samples / self.hop
    }
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    let log_step = 6.4f64.ln() / 27.0;
    if hz < 1000.0 {
        hz / F_SP
    } else {
        1000.0 / F_SP + (hz / 1000.0).ln() / log_step
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    let log_step = 6.4f64.ln() / 27.0;
    let min_log_mel = 1000.0 / F_SP;
    if mel < min_log_mel {
        mel * F_SP
    } else {
        1000.0 * ((mel - min_log_mel) * log_step).exp()
    }
}

/// Triangular filter: `(lower, center, upper)` edges in Hz, peak 1 at center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MelBand {
    pub lower: f64,
    pub center: f64,
    pub upper: f64,
}

impl MelBand {
    pub fn weight(&self, hz: f64) -> f64 {
        let up = (hz - self.lower) / (self.center - self.lower);
        let down = (self.upper - hz) / (self.upper - self.center);
        up.min(down).max(0.0)
    }
}

pub fn mel_bands(mel_bins: usize, fmin: f64, fmax: f64) -> Vec<MelBand> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> =
        (0..mel_bins + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (mel_bins + 1) as f64)).collect();
    edges.windows(3).map(|w| MelBand { lower: w[0], center: w[1], upper: w[2] }).collect()
}

/// Log-mel features of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    /// Row-major `n_frames x mel_bins`.
    pub frames: Vec<f64>,
    pub n_frames: usize,
    pub mel_bins: usize,
    pub frame_rate: f64,
    pub config_fingerprint: [u8; 32],
}

impl MelSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.mel_bins..(t + 1) * self.mel_bins]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n_frames, self.mel_bins], self.frames.clone()).expect("frames match dims")
    }

    pub fn fingerprint_hex(&self) -> String {
        hex::encode(self.config_fingerprint)
    }
}

/// Reusable log-mel extractor for one sample rate.
pub struct MelFrontend {
    cfg: FrontendConfig,
    sample_rate: u32,
    window: Vec<f64>,
    /// `mel_bins x (n_fft/2 + 1)`.
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
    fingerprint: [u8; 32],
}

impl std::fmt::Debug for MelFrontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelFrontend").field("cfg", &self.cfg).field("sample_rate", &self.sample_rate).finish()
    }
}

impl MelFrontend {
    pub fn new(cfg: &FrontendConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        let n_fft = cfg.n_fft;
        // periodic Hann, centered inside the FFT frame
        let offset = (n_fft - cfg.win) / 2;
        let mut window = vec![0.0; n_fft];
        for i in 0..cfg.win {
            window[offset + i] = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / cfg.win as f64).cos();
        }
        let bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let filters = mel_bands(cfg.mel_bins, cfg.fmin, cfg.fmax)
            .iter()
            .map(|b| (0..bins).map(|k| b.weight(k as f64 * bin_hz)).collect())
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate,
            window,
            filters,
            fft: FftPlanner::new().plan_fft_forward(n_fft),
            fingerprint: cfg.fingerprint(sample_rate),
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        if clip.sample_rate != self.sample_rate {
            return Err(Error::Input(format!(
                "clip `{}` is {} Hz, frontend expects {} Hz",
                clip.id, clip.sample_rate, self.sample_rate
            )));
        }
        let (hop, n_fft) = (self.cfg.hop, self.cfg.n_fft);
        if clip.len() < hop {
            return Err(Error::Degenerate(format!("clip `{}` has {} samples, shorter than one hop ({hop})", clip.id, clip.len())));
        }
        let n_frames = self.cfg.frame_count(clip.len());
        let pad = n_fft / 2;
        let mut padded = vec![0.0; (n_frames - 1) * hop + n_fft];
        let take = clip.len().min(padded.len() - pad);
        padded[pad..pad + take].copy_from_slice(&clip.samples[..take]);

        let bins = n_fft / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; bins];
        let mut frames = Vec::with_capacity(n_frames * self.cfg.mel_bins);
        for t in 0..n_frames {
            let seg = &padded[t * hop..t * hop + n_fft];
            for ((b, s), w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new(s * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for f in &self.filters {
                let e: f64 = f.iter().zip(&power).map(|(w, p)| w * p).sum();
                frames.push((e + self.cfg.floor_eps).ln());
            }
        }
        Ok(MelSpectrogram {
            frames,
            n_frames,
            mel_bins: self.cfg.mel_bins,
            frame_rate: self.sample_rate as f64 / hop as f64,
            config_fingerprint: self.fingerprint,
        })
    }
}

/// One-shot log-mel extraction.
pub fn logmel(clip: &AudioClip, cfg: &FrontendConfig) -> Result<MelSpectrogram> {
    MelFrontend::new(cfg, clip.sample_rate)?.compute(clip)
}
