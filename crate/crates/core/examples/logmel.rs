//! Renders a three-event scene, extracts log-mel features and prints them
//! as a coarse text heat map.
//!
//! `cargo run --example logmel -- [out.wav]`

use audiotext::audiofront::{write_wav, FrontendConfig, MelFrontend};
use audiotext::toygen::{default_registry, mix_scene, SceneConfig};

fn main() -> audiotext::Result<()> {
    let registry = default_registry();
    let scene = SceneConfig::default();
    let ex = mix_scene(&registry, &["low_tone", "fast_beeping", "rising_whistle"], &scene, "demo", 11)?;
    println!("caption: {}", ex.caption_text()?);
    let clip = ex.load_audio(&registry)?;
    println!("{} samples at {} Hz, peak {:.3}", clip.len(), clip.sample_rate, clip.peak());
    if let Some(path) = std::env::args().nth(1) {
        write_wav(&path, &clip)?;
        println!("wrote {path}");
    }

    let cfg = FrontendConfig { win: 1024, hop: 640, n_fft: 1024, mel_bins: 24, ..FrontendConfig::default() };
    let mel = MelFrontend::new(&cfg, clip.sample_rate)?.compute(&clip)?;
    println!("{} frames x {} mel bins at {:.1} frames/s", mel.n_frames, mel.mel_bins, mel.frame_rate);

    let (lo, hi) = mel.frames.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '@'];
    // highest band on top
    for bin in (0..mel.mel_bins).rev() {
        let row: String = (0..mel.n_frames)
            .map(|t| {
                let v = (mel.frame(t)[bin] - lo) / (hi - lo);
                shades[((v * (shades.len() - 1) as f64).round() as usize).min(shades.len() - 1)]
            })
            .collect();
        println!("{bin:>3} |{row}|");
    }
    Ok(())
}
