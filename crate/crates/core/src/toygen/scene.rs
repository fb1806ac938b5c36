use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::events::{event_len, synth_event, EventRegistry};
use super::corpus::{AudioSource, AudioTextExample, Provenance, Split};
use crate::audiofront::AudioClip;
use crate::error::{Error, Result};
use crate::seeding::rng_for;

pub const PEAK_LIMIT: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub sample_rate: u32,
    /// Clip length range in seconds.
    pub clip_seconds: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { sample_rate: 16000, clip_seconds: (2.0, 4.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PlacedEvent {
    pub event_id: String,
    pub seed: u64,
    /// Start sample.
    pub onset: usize,
}

/// Everything needed to re-render a scene: events in onset order.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SceneRecipe {
    pub sample_rate: u32,
    pub length: usize,
    pub events: Vec<PlacedEvent>,
}

impl SceneRecipe {
    /// Sums the placed events and scales the mix down to at most
    /// [`PEAK_LIMIT`].
    pub fn render(&self, registry: &EventRegistry, id: &str) -> Result<AudioClip> {
        let mut mix = vec![0.0; self.length];
        for p in &self.events {
            let ev = synth_event(registry.get(&p.event_id)?, self.sample_rate, p.seed)?;
            for (m, s) in mix[p.onset.min(self.length)..].iter_mut().zip(&ev.samples) {
                *m += s;
            }
        }
        let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > PEAK_LIMIT {
            let k = PEAK_LIMIT / peak;
            mix.iter_mut().for_each(|v| *v *= k);
        }
        AudioClip::new(id, self.sample_rate, mix)
    }

    pub fn tags(&self) -> BTreeSet<String> {
        self.events.iter().map(|e| e.event_id.clone()).collect()
    }
}

/// Draws a clip length and one onset per event. Event `j` starts inside the
/// `j`-th equal slot of the clip (pulled earlier if it would overrun the end),
/// so listed order is temporal order in most scenes; the recipe is sorted by
/// onset either way.
pub fn plan_scene(registry: &EventRegistry, event_ids: &[&str], cfg: &SceneConfig, seed: u64) -> Result<SceneRecipe> {
    if event_ids.is_empty() {
        return Err(Error::Config("a scene needs at least one event".into()));
    }
    if event_ids.len() > 3 {
        return Err(Error::Config(format!("a scene holds at most 3 events, got {}", event_ids.len())));
    }
    let distinct: BTreeSet<&&str> = event_ids.iter().collect();
    if distinct.len() != event_ids.len() {
        return Err(Error::Config(format!("scene events must be distinct: {event_ids:?}")));
    }
    let (lo, hi) = cfg.clip_seconds;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::Config(format!("clip_seconds must satisfy 0 < low <= high, got {:?}", cfg.clip_seconds)));
    }
    let mut rng = rng_for(seed, "scene", 0);
    let sr = cfg.sample_rate as f64;
    let secs = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let length = (secs * sr).round() as usize;
    let slot = length / event_ids.len();
    let mut events = Vec::with_capacity(event_ids.len());
    for (j, id) in event_ids.iter().enumerate() {
        let event_seed = rng.gen::<u64>();
        let spec = registry.get(id)?;
        spec.validate()?;
        let n = event_len(spec, cfg.sample_rate, event_seed);
        let start = j * slot + rng.gen_range(0..slot.max(1) / 2 + 1);
        let onset = start.min(length.saturating_sub(n));
        events.push(PlacedEvent { event_id: id.to_string(), seed: event_seed, onset });
    }
    events.sort_by_key(|e| e.onset);
    Ok(SceneRecipe { sample_rate: cfg.sample_rate, length, events })
}

const JOINERS: [&str; 3] = ["followed by", "and then", "then"];

/// Template caption naming every event in onset order.
pub fn scene_caption(registry: &EventRegistry, recipe: &SceneRecipe, seed: u64) -> Result<String> {
    let mut rng = rng_for(seed, "caption", 0);
    let mut out = String::new();
    for (j, p) in recipe.events.iter().enumerate() {
        let spec = registry.get(&p.event_id)?;
        if j > 0 {
            out.push(' ');
            out.push_str(JOINERS.choose(&mut rng).expect("non-empty"));
            out.push(' ');
        }
        out.push_str(spec.phrases.choose(&mut rng).expect("validated non-empty"));
    }
    Ok(out)
}

/// `n` more template captions of one scene, for multi-reference metrics.
pub fn alternate_captions(registry: &EventRegistry, recipe: &SceneRecipe, seed: u64, n: usize) -> Result<Vec<String>> {
    (0..n as u64).map(|k| scene_caption(registry, recipe, crate::seeding::child_seed(seed, "reference", k))).collect()
}

/// Plans a scene and wraps it as a captioned example whose audio renders on
/// demand.
pub fn mix_scene(
    registry: &EventRegistry,
    event_ids: &[&str],
    cfg: &SceneConfig,
    clip_id: impl Into<String>,
    seed: u64,
) -> Result<AudioTextExample> {
    let recipe = plan_scene(registry, event_ids, cfg, seed)?;
    let caption = scene_caption(registry, &recipe, seed)?;
    Ok(AudioTextExample {
        clip_id: clip_id.into(),
        tags: recipe.tags(),
        audio: AudioSource::Scene(recipe),
        caption: Some(caption),
        split: Split::Train,
        provenance: Provenance::HumanStyle,
    })
}
