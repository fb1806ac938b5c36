use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;

use super::events::EventRegistry;
use super::scene::{mix_scene, plan_scene, SceneConfig, SceneRecipe};
use crate::audiofront::{load_wav, write_wav, AudioClip};
use crate::error::{Error, Result};
use crate::seeding::{child_seed, rng_for};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Provenance {
    #[serde(rename = "human-style")]
    HumanStyle,
    #[serde(rename = "synthetic")]
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AudioSource {
    Wav(PathBuf),
    /// Rendered from the event registry when needed.
    Scene(SceneRecipe),
}

/// One corpus item. Tag-only items carry no caption.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioTextExample {
    pub clip_id: String,
    pub audio: AudioSource,
    pub caption: Option<String>,
    pub tags: BTreeSet<String>,
    pub split: Split,
    pub provenance: Provenance,
}

impl AudioTextExample {
    pub fn load_audio(&self, registry: &EventRegistry) -> Result<AudioClip> {
        let mut clip = match &self.audio {
            AudioSource::Wav(p) => load_wav(p)?,
            AudioSource::Scene(r) => r.render(registry, &self.clip_id)?,
        };
        clip.id = self.clip_id.clone();
        Ok(clip)
    }

    pub fn caption_text(&self) -> Result<&str> {
        self.caption.as_deref().ok_or_else(|| Error::Data(format!("clip `{}` has no caption", self.clip_id)))
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_tag_only: usize,
    /// Fraction of the tag-only corpus assigned to its validation split.
    pub tag_only_val_fraction: f64,
    /// Events that never occur in the caption corpus.
    pub tag_holdout: BTreeSet<String>,
    /// Relative frequency of scenes with 1, 2 and 3 events.
    pub event_count_weights: [f64; 3],
    pub scene: SceneConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 300,
            n_val: 100,
            n_test: 100,
            n_tag_only: 2000,
            tag_only_val_fraction: 0.1,
            tag_holdout: BTreeSet::from(["insect_chirping".to_string()]),
            event_count_weights: [1.0, 3.0, 4.0],
            scene: SceneConfig::default(),
        }
    }
}

/// Caption corpus (captioned, holdout-free) and tag-only corpus (full
/// registry, no captions).
#[derive(Clone, Debug, PartialEq)]
pub struct Corpora {
    pub caption: Vec<AudioTextExample>,
    pub tag_only: Vec<AudioTextExample>,
}

impl Corpora {
    pub fn caption_split(&self, split: Split) -> Vec<AudioTextExample> {
        self.caption.iter().filter(|e| e.split == split).cloned().collect()
    }
}

fn random_scene_events<'r>(
    pool: &[&'r str],
    weights: &WeightedIndex<f64>,
    seed: u64,
) -> Vec<&'r str> {
    let mut rng = rng_for(seed, "events", 0);
    let k = (weights.sample(&mut rng) + 1).min(pool.len());
    pool.choose_multiple(&mut rng, k).copied().collect()
}

pub fn generate_corpus(registry: &EventRegistry, cfg: &CorpusConfig, seed: u64) -> Result<Corpora> {
    if cfg.n_train == 0 || cfg.n_val == 0 || cfg.n_test == 0 {
        return Err(Error::Config("corpus split sizes must be positive".into()));
    }
    for h in &cfg.tag_holdout {
        registry.get(h).map_err(|_| Error::Config(format!("holdout tag `{h}` is not a registry event")))?;
    }
    let ids = registry.ids();
    let all: Vec<&str> = ids.iter().map(String::as_str).collect();
    let allowed: Vec<&str> = all.iter().copied().filter(|id| !cfg.tag_holdout.contains(*id)).collect();
    if allowed.is_empty() {
        return Err(Error::Config("tag holdout covers every event".into()));
    }
    if !(0.0..1.0).contains(&cfg.tag_only_val_fraction) {
        return Err(Error::Config("tag_only_val_fraction must be in [0, 1)".into()));
    }
    let weights = WeightedIndex::new(cfg.event_count_weights)
        .map_err(|e| Error::Config(format!("event_count_weights: {e}")))?;

    let mut caption = Vec::with_capacity(cfg.n_train + cfg.n_val + cfg.n_test);
    for (split, n, name) in [(Split::Train, cfg.n_train, "train"), (Split::Val, cfg.n_val, "val"), (Split::Test, cfg.n_test, "test")] {
        for i in 0..n {
            let item_seed = child_seed(seed, &format!("caption-{name}"), i as u64);
            let events = random_scene_events(&allowed, &weights, item_seed);
            let mut ex = mix_scene(registry, &events, &cfg.scene, format!("cap-{name}-{i:05}"), item_seed)?;
            ex.split = split;
            caption.push(ex);
        }
    }

    let n_val = (cfg.n_tag_only as f64 * cfg.tag_only_val_fraction).round() as usize;
    let mut tag_only = Vec::with_capacity(cfg.n_tag_only);
    for i in 0..cfg.n_tag_only {
        let item_seed = child_seed(seed, "tag-only", i as u64);
        let events = random_scene_events(&all, &weights, item_seed);
        let recipe = plan_scene(registry, &events, &cfg.scene, item_seed)?;
        tag_only.push(AudioTextExample {
            clip_id: format!("tag-{i:05}"),
            tags: recipe.tags(),
            audio: AudioSource::Scene(recipe),
            caption: None,
            split: if i >= cfg.n_tag_only - n_val { Split::Val } else { Split::Train },
            provenance: Provenance::HumanStyle,
        });
    }
    Ok(Corpora { caption, tag_only })
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassificationConfig {
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub scene: SceneConfig,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self { per_class_train: 20, per_class_test: 20, scene: SceneConfig::default() }
    }
}

/// Single-event clips for each label; item label is the index in `labels`.
pub fn classification_set(
    registry: &EventRegistry,
    labels: &[String],
    cfg: &ClassificationConfig,
    seed: u64,
) -> Result<Vec<(AudioTextExample, usize)>> {
    if labels.is_empty() {
        return Err(Error::Config("classification set needs at least one label".into()));
    }
    let mut out = Vec::new();
    for (split, n, name) in [(Split::Train, cfg.per_class_train, "train"), (Split::Test, cfg.per_class_test, "test")] {
        for i in 0..n {
            for (c, label) in labels.iter().enumerate() {
                let item_seed = child_seed(seed, &format!("cls-{name}-{label}"), i as u64);
                let recipe = plan_scene(registry, &[label], &cfg.scene, item_seed)?;
                let ex = AudioTextExample {
                    clip_id: format!("cls-{name}-{label}-{i:04}"),
                    tags: recipe.tags(),
                    audio: AudioSource::Scene(recipe),
                    caption: None,
                    split,
                    provenance: Provenance::HumanStyle,
                };
                out.push((ex, c));
            }
        }
    }
    Ok(out)
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub clip_id: String,
    pub wav_path: String,
    pub caption: Option<String>,
    pub tags: Vec<String>,
    pub split: Split,
    pub provenance: Provenance,
}

fn validate_items(items: &[AudioTextExample]) -> Result<()> {
    let mut seen = HashSet::new();
    for e in items {
        if !seen.insert(e.clip_id.as_str()) {
            return Err(Error::Data(format!("duplicate clip_id `{}`", e.clip_id)));
        }
        if e.tags.is_empty() {
            return Err(Error::Data(format!("clip `{}` has no tags", e.clip_id)));
        }
        if e.caption.as_deref().is_some_and(|c| c.trim().is_empty()) {
            return Err(Error::Data(format!("clip `{}` has an empty caption", e.clip_id)));
        }
    }
    Ok(())
}

/// Writes a JSON-lines manifest. Every item must already point at a WAV
/// file; paths under the manifest's directory are stored relative to it.
pub fn write_manifest(path: impl AsRef<Path>, items: &[AudioTextExample]) -> Result<()> {
    let path = path.as_ref();
    validate_items(items)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for e in items {
        let AudioSource::Wav(wav) = &e.audio else {
            return Err(Error::Data(format!("clip `{}` has not been rendered to a WAV file", e.clip_id)));
        };
        let rel = wav.strip_prefix(base).unwrap_or(wav);
        let rec = ManifestRecord {
            clip_id: e.clip_id.clone(),
            wav_path: rel.to_string_lossy().into_owned(),
            caption: e.caption.clone(),
            tags: e.tags.iter().cloned().collect(),
            split: e.split,
            provenance: e.provenance,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(&out).map_err(|e| Error::file(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<AudioTextExample>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut items = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
        let wav = PathBuf::from(&rec.wav_path);
        items.push(AudioTextExample {
            clip_id: rec.clip_id,
            audio: AudioSource::Wav(if wav.is_absolute() { wav } else { base.join(wav) }),
            caption: rec.caption,
            tags: rec.tags.into_iter().collect(),
            split: rec.split,
            provenance: rec.provenance,
        });
    }
    validate_items(&items)?;
    Ok(items)
}

/// Renders every scene under `dir/audio/` and writes `dir/<name>.jsonl`.
/// Returns the items re-pointed at their WAV files.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    name: &str,
    items: &[AudioTextExample],
    registry: &EventRegistry,
) -> Result<Vec<AudioTextExample>> {
    let dir = dir.as_ref();
    let audio_dir = dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::file(&audio_dir, e))?;
    let mut out = Vec::with_capacity(items.len());
    for e in items {
        let mut e = e.clone();
        if let AudioSource::Scene(_) = &e.audio {
            let wav = audio_dir.join(format!("{}.wav", e.clip_id));
            write_wav(&wav, &e.load_audio(registry)?)?;
            e.audio = AudioSource::Wav(wav);
        }
        out.push(e);
    }
    write_manifest(dir.join(format!("{name}.jsonl")), &out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toygen::default_registry;

    fn small() -> CorpusConfig {
        CorpusConfig { n_train: 100, n_val: 10, n_test: 10, n_tag_only: 50, ..CorpusConfig::default() }
    }

    #[test]
    fn split_sizes_and_holdout() {
        let reg = default_registry();
        let c = generate_corpus(&reg, &small(), 1).unwrap();
        assert_eq!(c.caption_split(Split::Train).len(), 100);
        assert_eq!(c.caption_split(Split::Val).len(), 10);
        assert_eq!(c.tag_only.len(), 50);
        assert!(c.caption.iter().all(|e| !e.tags.contains("insect_chirping") && e.caption.is_some()));
        assert!(c.tag_only.iter().all(|e| e.caption.is_none()));
        let ids: HashSet<_> = c.caption.iter().chain(&c.tag_only).map(|e| &e.clip_id).collect();
        assert_eq!(ids.len(), 170);
        for e in &c.caption {
            assert_eq!(reg.recover_tags(e.caption.as_ref().unwrap()), e.tags);
        }
    }

    #[test]
    fn holdout_of_everything_is_rejected() {
        let reg = default_registry();
        let cfg = CorpusConfig { tag_holdout: reg.ids().into_iter().collect(), ..small() };
        assert!(matches!(generate_corpus(&reg, &cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_gives_identical_manifests() {
        let reg = default_registry();
        let cfg = CorpusConfig { n_train: 4, n_val: 2, n_test: 2, n_tag_only: 3, ..CorpusConfig::default() };
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut bytes = Vec::new();
        for d in &dirs {
            let c = generate_corpus(&reg, &cfg, 9).unwrap();
            write_corpus(d.path(), "caption", &c.caption, &reg).unwrap();
            bytes.push((
                std::fs::read(d.path().join("caption.jsonl")).unwrap(),
                std::fs::read(d.path().join("audio/cap-train-00000.wav")).unwrap(),
            ));
        }
        assert_eq!(bytes[0], bytes[1]);
    }

    #[test]
    fn manifest_round_trip() {
        let reg = default_registry();
        let cfg = CorpusConfig { n_train: 3, n_val: 1, n_test: 1, n_tag_only: 2, ..CorpusConfig::default() };
        let c = generate_corpus(&reg, &cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = write_corpus(dir.path(), "tags", &c.tag_only, &reg).unwrap();
        let back = read_manifest(dir.path().join("tags.jsonl")).unwrap();
        assert_eq!(back, written);
        let clip = back[0].load_audio(&reg).unwrap();
        let exact = c.tag_only[0].load_audio(&reg).unwrap();
        let worst = clip.samples.iter().zip(&exact.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1.0 / 32768.0);

        std::fs::write(dir.path().join("bad.jsonl"), "{\"clip_id\": 3}\n").unwrap();
        let err = read_manifest(dir.path().join("bad.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Parse(ref m) if m.contains(":1:")), "{err}");
    }

    #[test]
    fn classification_set_is_single_event() {
        let reg = default_registry();
        let labels = vec!["low_tone".to_string(), "white_noise".to_string()];
        let cfg = ClassificationConfig { per_class_train: 2, per_class_test: 3, ..Default::default() };
        let set = classification_set(&reg, &labels, &cfg, 0).unwrap();
        assert_eq!(set.len(), 10);
        for (e, c) in &set {
            assert_eq!(e.tags, BTreeSet::from([labels[*c].clone()]));
        }
    }
}
