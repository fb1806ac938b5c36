//! Procedural audio events, multi-event scenes with template captions, and
//! the caption / tag-only corpora built from them.

mod corpus;
mod events;
mod scene;

pub use corpus::{
    classification_set, generate_corpus, read_manifest, write_corpus, write_manifest, AudioSource, AudioTextExample,
    ClassificationConfig, Corpora, CorpusConfig, ManifestRecord, Provenance, Split,
};
pub use events::{default_registry, event_len, synth_event, EventRegistry, EventSpec, Synthesis};
pub use scene::{mix_scene, plan_scene, alternate_captions, scene_caption, PlacedEvent, SceneConfig, SceneRecipe, PEAK_LIMIT};
