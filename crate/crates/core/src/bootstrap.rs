//! Expands a tag-only corpus into synthetic audio-caption pairs using a
//! trained captioner.

use std::collections::BTreeSet;

use crate::audiofront::MelSpectrogram;
use crate::captioner::{caption_clip, CaptionModel};
use crate::error::{Error, Result};
use crate::toygen::{AudioTextExample, EventRegistry, Provenance};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Drop a clip if any of its tags is unknown.
    #[default]
    Strict,
    /// Drop a clip only if none of its tags is known.
    Lenient,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped: usize,
    pub mode: FilterMode,
}

/// Every tag used anywhere in `corpus`.
pub fn tag_vocabulary(corpus: &[AudioTextExample]) -> BTreeSet<String> {
    corpus.iter().flat_map(|e| e.tags.iter().cloned()).collect()
}

pub fn filter_by_tag_vocab(
    corpus: &[AudioTextExample],
    known: &BTreeSet<String>,
    mode: FilterMode,
) -> (Vec<AudioTextExample>, FilterReport) {
    let keep = |e: &AudioTextExample| match mode {
        FilterMode::Strict => e.tags.iter().all(|t| known.contains(t)),
        FilterMode::Lenient => e.tags.iter().any(|t| known.contains(t)),
    };
    let kept: Vec<AudioTextExample> = corpus.iter().filter(|e| keep(e)).cloned().collect();
    let report = FilterReport { kept: kept.len(), dropped: corpus.len() - kept.len(), mode };
    (kept, report)
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct BootstrapReport {
    pub generated: usize,
    /// Clips whose caption was force-finished at the length limit.
    pub forced: Vec<String>,
}

/// One beam-searched caption per clip, conditioned on the clip's known
/// tags. Output is sorted by clip id and marked synthetic.
pub fn generate_synthetic_corpus(
    model: &CaptionModel,
    filtered: &[AudioTextExample],
    features: &mut dyn FnMut(&AudioTextExample) -> Result<std::sync::Arc<MelSpectrogram>>,
    beam_size: usize,
) -> Result<(Vec<AudioTextExample>, BootstrapReport)> {
    let mut order: Vec<&AudioTextExample> = filtered.iter().collect();
    order.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let mut out = Vec::with_capacity(order.len());
    let mut report = BootstrapReport::default();
    for ex in order {
        let known: BTreeSet<String> = ex.tags.iter().filter(|t| model.tags.binary_search(t).is_ok()).cloned().collect();
        let tags = model.tag_ids(&known).map_err(|e| Error::Data(format!("clip `{}`: {e}", ex.clip_id)))?;
        let mel = features(ex)?;
        let cap = caption_clip(model, &ex.clip_id, &mel, Some(&tags), beam_size)?;
        if cap.forced {
            report.forced.push(ex.clip_id.clone());
        }
        out.push(AudioTextExample { caption: Some(cap.caption), provenance: Provenance::Synthetic, ..ex.clone() });
    }
    report.generated = out.len();
    Ok((out, report))
}

/// Fraction of captions naming every one of their tagged events.
pub fn tag_recovery_rate<'a>(registry: &EventRegistry, items: impl IntoIterator<Item = (&'a str, &'a BTreeSet<String>)>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (caption, tags) in items {
        n += 1;
        if registry.recover_tags(caption).is_superset(tags) {
            hit += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}
