//! Trains a small tag-guided captioner on the caption corpus, then captions
//! tag-only clips to build synthetic audio-text pairs.
//!
//! `cargo run --example caption_bootstrap`

use audiotext::pipeline::{bootstrap_stage, caption_vocab, captioner_stage, make_corpus, resolve, CaptionTexts, FeatureBank, Profile};
use audiotext::toygen::default_registry;
use serde_json::json;

fn main() -> audiotext::Result<()> {
    // a trimmed desk profile so the example finishes in about a minute
    let cfg = resolve(
        Profile::Desk,
        json!({
            "corpus": {"main": {"n_train": 200, "n_val": 40, "n_test": 40, "n_tag_only": 200}},
            "captioner": {"captions_per_clip": 10, "train": {"epochs": 4}, "ablation": false},
        }),
    )?;
    let registry = default_registry();
    let corpus = make_corpus(&cfg, &registry)?;
    let vocab = caption_vocab(&cfg, &corpus.main.caption)?;
    let texts = CaptionTexts::from_scenes(&cfg, &registry, &corpus.main.caption)?;
    let mut bank = FeatureBank::new(registry.clone());

    let captioner = captioner_stage(&cfg, &vocab, &corpus.main.caption, &texts, &mut bank, true)?;
    print!("{}", captioner.report.summary());
    for (epoch, ce) in &captioner.trace.val {
        println!("  epoch {epoch}: val CE {ce:.4}");
    }

    let boot = bootstrap_stage(&cfg, &captioner, &corpus.main.tag_only, &mut bank)?;
    print!("{}", boot.report.summary());
    for ex in boot.synthetic.iter().take(8) {
        println!("  {:?} -> {}", ex.tags, ex.caption.as_deref().unwrap_or(""));
    }
    Ok(())
}
