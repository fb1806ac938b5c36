use std::path::Path;

use crate::error::{Error, Result};

/// Mono waveform with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub id: String,
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if sample_rate == 0 {
            return Err(Error::Input(format!("clip `{id}`: sample rate must be positive")));
        }
        if samples.is_empty() {
            return Err(Error::Input(format!("clip `{id}` is empty")));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!("clip `{id}`: sample {i} is not finite")));
        }
        Ok(Self { id, sample_rate, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Parse(format!("{}: {io}", path.display())),
        hound::Error::Unsupported => Error::Format(format!("{}: unsupported WAV encoding", path.display())),
        other => Error::Parse(format!("{}: {other}", path.display())),
    }
}

/// Reads a 16-bit PCM mono WAV, scaling samples by `1/32768`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!("{}: expected mono, found {} channels", path.display(), spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "{}: expected 16-bit PCM, found {}-bit {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let declared = reader.len() as usize;
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|e| wav_error(path, e))?;
    if samples.len() != declared {
        return Err(Error::Parse(format!("{}: header declares {declared} samples, read {}", path.display(), samples.len())));
    }
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    AudioClip::new(id, spec.sample_rate, samples).map_err(|e| match e {
        Error::Input(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes a clip as 16-bit PCM mono, rounding to the nearest level and
/// clipping to the representable range.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::file(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(io)?;
    for &s in &clip.samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16).map_err(io)?;
    }
    w.finalize().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_wav(&p, &AudioClip::new("z", 16000, vec![0.0; 16000]).unwrap()).unwrap();
        let c = load_wav(&p).unwrap();
        assert_eq!(c.len(), 16000);
        assert_eq!(c.sample_rate, 16000);
        assert!(c.samples.iter().all(|&s| s == 0.0));
        assert_eq!(c.id, "z");
    }

    #[test]
    fn most_negative_level_is_minus_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.wav");
        let spec = hound::WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(i16::MIN).unwrap();
        w.write_sample(16384i16).unwrap();
        w.finalize().unwrap();
        assert_eq!(load_wav(&p).unwrap().samples, vec![-1.0, 0.5]);
    }

    #[test]
    fn tone_round_trip_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        let samples: Vec<f64> = (0..4000).map(|i| 0.99 * (i as f64 * 0.0713).sin()).chain([1.0, -1.0]).collect();
        let clip = AudioClip::new("t", 16000, samples).unwrap();
        write_wav(&p, &clip).unwrap();
        let back = load_wav(&p).unwrap();
        let worst = clip.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1.0 / 32768.0, "{worst}");
    }

    #[test]
    fn stereo_and_float_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(1i16).unwrap();
        w.write_sample(1i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Format(_))));

        let spec = hound::WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 32, sample_format: hound::SampleFormat::Float };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0.5f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_wav(&p, &AudioClip::new("t", 16000, vec![0.25; 1000]).unwrap()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Parse(_))), "{:?}", load_wav(&p));
        std::fs::write(&p, &bytes[..20]).unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Parse(_))));
    }
}
