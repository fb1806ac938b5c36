//! Binary feature cache: magic, dims, frame rate and config fingerprint
//! followed by row-major little-endian `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use super::mel::MelSpectrogram;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LOGMEL01";
const HEADER: usize = 8 + 4 + 4 + 8 + 32;

pub fn save_features(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(HEADER + 4 * mel.frames.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(mel.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(mel.mel_bins as u32).to_le_bytes());
    out.extend_from_slice(&mel.frame_rate.to_le_bytes());
    out.extend_from_slice(&mel.config_fingerprint);
    for v in &mel.frames {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(&out).map_err(|e| Error::file(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::file(path, e))?;
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!("{}: not a feature cache file", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (n_frames, mel_bins) = (u32_at(8), u32_at(12));
    let frame_rate = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let config_fingerprint: [u8; 32] = bytes[24..56].try_into().unwrap();
    let body = &bytes[HEADER..];
    if body.len() != 4 * n_frames * mel_bins {
        return Err(Error::Parse(format!(
            "{}: expected {} bytes of features, found {}",
            path.display(),
            4 * n_frames * mel_bins,
            body.len()
        )));
    }
    let frames = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok(MelSpectrogram { frames, n_frames, mel_bins, frame_rate, config_fingerprint })
}

/// Loads a cache entry only if it was produced with the given fingerprint.
pub fn load_if_current(path: impl AsRef<Path>, fingerprint: &[u8; 32]) -> Result<Option<MelSpectrogram>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(None);
    }
    let mel = load_features(path)?;
    Ok((&mel.config_fingerprint == fingerprint).then_some(mel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiofront::{logmel, AudioClip, FrontendConfig};

    #[test]
    fn round_trip_and_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.lmel");
        let clip = AudioClip::new("c", 16000, (0..3200).map(|i| (i as f64 * 0.05).sin() * 0.3).collect()).unwrap();
        let cfg = FrontendConfig::default();
        let mel = logmel(&clip, &cfg).unwrap();
        save_features(&p, &mel).unwrap();
        let back = load_if_current(&p, &mel.config_fingerprint).unwrap().unwrap();
        assert_eq!((back.n_frames, back.mel_bins), (mel.n_frames, mel.mel_bins));
        for (a, b) in mel.frames.iter().zip(&back.frames) {
            assert_eq!(*a as f32 as f64, *b);
        }
        let other = FrontendConfig { hop: 320, ..cfg }.fingerprint(16000);
        assert!(load_if_current(&p, &other).unwrap().is_none());

        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_features(&p), Err(Error::Parse(_))));
        std::fs::write(&p, b"garbage").unwrap();
        assert!(matches!(load_features(&p), Err(Error::Format(_))));
    }
}
