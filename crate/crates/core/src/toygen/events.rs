use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::audiofront::AudioClip;
use crate::error::{Error, Result};
use crate::textproc::{label_to_text, normalize};

/// How an event is synthesized. Ranges are inclusive `(low, high)` pairs.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Synthesis {
    Sine,
    Square,
    /// Linear frequency sweep from `freq` to `end_freq`.
    Chirp { end_freq: (f64, f64) },
    /// White noise passed `passes` times through a one-pole low-pass with
    /// coefficient `smoothing` (0 keeps it white).
    NoiseBurst { smoothing: f64, passes: usize },
    /// Tone with a raised-cosine amplitude envelope repeating at `rate` Hz.
    AmTone { rate: (f64, f64) },
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EventSpec {
    pub event_id: String,
    pub synthesis: Synthesis,
    /// Carrier or start frequency in Hz (unused by noise).
    pub freq: (f64, f64),
    /// Seconds.
    pub duration: (f64, f64),
    pub amplitude: (f64, f64),
    /// Caption phrases; each contains the label text as consecutive words.
    pub phrases: Vec<String>,
}

fn range_ok(r: (f64, f64)) -> bool {
    r.0.is_finite() && r.1.is_finite() && r.0 <= r.1
}

fn draw<R: Rng>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..=r.1)
    }
}

impl EventSpec {
    pub fn label_text(&self) -> String {
        label_to_text(&self.event_id)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.event_id;
        if id.is_empty() {
            return Err(Error::Config("event id is empty".into()));
        }
        let ranges = [self.freq, self.duration, self.amplitude];
        if !ranges.iter().all(|r| range_ok(*r)) {
            return Err(Error::Config(format!("event `{id}`: every range needs finite low <= high")));
        }
        if self.duration.0 <= 0.0 || self.amplitude.0 <= 0.0 || self.amplitude.1 > 1.0 {
            return Err(Error::Config(format!("event `{id}`: duration must be positive and amplitude in (0, 1]")));
        }
        match &self.synthesis {
            Synthesis::Chirp { end_freq } if !range_ok(*end_freq) => {
                return Err(Error::Config(format!("event `{id}`: bad chirp end range")))
            }
            Synthesis::AmTone { rate } if !range_ok(*rate) || rate.0 <= 0.0 => {
                return Err(Error::Config(format!("event `{id}`: bad modulation rate")))
            }
            Synthesis::NoiseBurst { smoothing, .. } if !(0.0..1.0).contains(smoothing) => {
                return Err(Error::Config(format!("event `{id}`: smoothing must be in [0, 1)")))
            }
            _ => {}
        }
        if self.phrases.is_empty() {
            return Err(Error::Config(format!("event `{id}` has no caption phrases")));
        }
        let label = normalize(&self.label_text());
        for p in &self.phrases {
            if !contains_words(&normalize(p), &label) {
                return Err(Error::Config(format!("event `{id}`: phrase {p:?} does not contain its label")));
            }
        }
        Ok(())
    }
}

/// Ordered set of events with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRegistry {
    events: Vec<EventSpec>,
}

impl EventRegistry {
    pub fn new(events: Vec<EventSpec>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &events {
            e.validate()?;
            if !seen.insert(e.event_id.as_str()) {
                return Err(Error::Config(format!("duplicate event id `{}`", e.event_id)));
            }
        }
        if events.is_empty() {
            return Err(Error::Config("event registry is empty".into()));
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[EventSpec] {
        &self.events
    }

    pub fn ids(&self) -> Vec<String> {
        self.events.iter().map(|e| e.event_id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Result<&EventSpec> {
        self.events.iter().find(|e| e.event_id == id).ok_or_else(|| Error::Lookup(format!("unknown event `{id}`")))
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events whose label text appears as consecutive words in `caption`.
    pub fn recover_tags(&self, caption: &str) -> BTreeSet<String> {
        let words = normalize(caption);
        self.events
            .iter()
            .filter(|e| contains_words(&words, &normalize(&e.label_text())))
            .map(|e| e.event_id.clone())
            .collect()
    }
}

fn contains_words(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

fn event(id: &str, synthesis: Synthesis, freq: (f64, f64), phrases: &[&str]) -> EventSpec {
    EventSpec {
        event_id: id.into(),
        synthesis,
        freq,
        duration: (0.8, 1.6),
        amplitude: (0.4, 0.8),
        phrases: phrases.iter().map(|s| s.to_string()).collect(),
    }
}

/// The twelve built-in events.
pub fn default_registry() -> EventRegistry {
    use Synthesis::*;
    EventRegistry::new(vec![
        event("low_tone", Sine, (180.0, 240.0), &["a low tone", "a steady low tone", "a low tone hums"]),
        event("mid_tone", Sine, (560.0, 700.0), &["a mid tone", "a clear mid tone", "a mid tone sounds"]),
        event("high_tone", Sine, (2600.0, 3200.0), &["a high tone", "a piercing high tone", "a high tone rings"]),
        event("deep_buzz", Square, (80.0, 110.0), &["a deep buzz", "a loud deep buzz", "a deep buzz drones"]),
        event("harsh_beep", Square, (900.0, 1100.0), &["a harsh beep", "a short harsh beep", "a harsh beep blares"]),
        event(
            "rising_whistle",
            Chirp { end_freq: (2200.0, 2800.0) },
            (600.0, 900.0),
            &["a rising whistle", "a quick rising whistle", "a rising whistle sweeps up"],
        ),
        event(
            "falling_whistle",
            Chirp { end_freq: (600.0, 900.0) },
            (2200.0, 2800.0),
            &["a falling whistle", "a slow falling whistle", "a falling whistle slides down"],
        ),
        event(
            "white_noise",
            NoiseBurst { smoothing: 0.0, passes: 0 },
            (0.0, 0.0),
            &["white noise", "a burst of white noise", "white noise hisses"],
        ),
        event(
            "low_rumble",
            NoiseBurst { smoothing: 0.96, passes: 2 },
            (0.0, 0.0),
            &["a low rumble", "a distant low rumble", "a low rumble grows"],
        ),
        event(
            "fast_beeping",
            AmTone { rate: (7.0, 9.0) },
            (1500.0, 1800.0),
            &["fast beeping", "rapid fast beeping", "fast beeping repeats"],
        ),
        event(
            "slow_pulsing",
            AmTone { rate: (1.5, 2.5) },
            (380.0, 480.0),
            &["slow pulsing", "a gentle slow pulsing", "slow pulsing throbs"],
        ),
        event(
            "insect_chirping",
            AmTone { rate: (12.0, 16.0) },
            (4500.0, 5500.0),
            &["insect chirping", "faint insect chirping", "insect chirping trills"],
        ),
    ])
    .expect("built-in registry is valid")
}

/// Sample count [`synth_event`] will produce, without rendering.
pub fn event_len(spec: &EventSpec, sample_rate: u32, seed: u64) -> usize {
    let duration = draw(&mut ChaCha8Rng::seed_from_u64(seed), spec.duration);
    ((duration * sample_rate as f64).round() as usize).max(1)
}

/// Renders one event occurrence. The result is exactly `duration * rate`
/// samples long with peak magnitude equal to the drawn amplitude.
pub fn synth_event(spec: &EventSpec, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let duration = draw(&mut rng, spec.duration);
    let amplitude = draw(&mut rng, spec.amplitude);
    let f0 = draw(&mut rng, spec.freq);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let n = ((duration * sr).round() as usize).max(1);
    let tau = std::f64::consts::TAU;
    let mut x: Vec<f64> = match &spec.synthesis {
        Synthesis::Sine => (0..n).map(|i| (tau * f0 * i as f64 / sr + phase).sin()).collect(),
        Synthesis::Square => (0..n).map(|i| (tau * f0 * i as f64 / sr + phase).sin().signum()).collect(),
        Synthesis::Chirp { end_freq } => {
            let f1 = draw(&mut rng, *end_freq);
            let slope = (f1 - f0) / duration;
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    (tau * (f0 * t + 0.5 * slope * t * t) + phase).sin()
                })
                .collect()
        }
        Synthesis::NoiseBurst { smoothing, passes } => {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for _ in 0..*passes {
                let mut y = 0.0;
                for s in v.iter_mut() {
                    y = smoothing * y + (1.0 - smoothing) * *s;
                    *s = y;
                }
            }
            v
        }
        Synthesis::AmTone { rate } => {
            let r = draw(&mut rng, *rate);
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    0.5 * (1.0 - (tau * r * t).cos()) * (tau * f0 * t + phase).sin()
                })
                .collect()
        }
    };
    // 10 ms fades against clicks
    let fade = ((0.01 * sr) as usize).min(n / 4);
    for i in 0..fade {
        let g = i as f64 / fade as f64;
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let k = amplitude / peak;
        x.iter_mut().for_each(|v| *v *= k);
    }
    AudioClip::new(spec.event_id.clone(), sample_rate, x)
}
