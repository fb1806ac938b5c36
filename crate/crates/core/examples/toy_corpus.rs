//! Generates a small captioned corpus and a tag-only corpus, shows that
//! tags are recoverable from captions, and optionally writes WAVs and
//! manifests.
//!
//! `cargo run --example toy_corpus -- [out_dir]`

use audiotext::toygen::{default_registry, generate_corpus, write_corpus, CorpusConfig, Split};

fn main() -> audiotext::Result<()> {
    let registry = default_registry();
    println!("{} event types:", registry.len());
    for e in registry.events() {
        println!("  {:<16} {}", e.event_id, e.label_text());
    }
    let cfg = CorpusConfig { n_train: 40, n_val: 10, n_test: 10, n_tag_only: 30, ..CorpusConfig::default() };
    let corpora = generate_corpus(&registry, &cfg, 5)?;
    println!("\nheld out of the caption corpus: {:?}", cfg.tag_holdout);
    for ex in corpora.caption_split(Split::Train).iter().take(5) {
        let recovered = registry.recover_tags(ex.caption_text()?);
        println!("  {} {:?}\n    \"{}\" -> recovered {:?}", ex.clip_id, ex.tags, ex.caption_text()?, recovered);
    }
    let exact = corpora.caption.iter().filter(|e| registry.recover_tags(e.caption.as_deref().unwrap_or("")) == e.tags).count();
    println!("tags recovered exactly for {exact}/{} captions", corpora.caption.len());
    for ex in corpora.tag_only.iter().take(3) {
        println!("  tag-only {} {:?}", ex.clip_id, ex.tags);
    }
    if let Some(dir) = std::env::args().nth(1) {
        write_corpus(&dir, "caption", &corpora.caption, &registry)?;
        write_corpus(&dir, "tag_only", &corpora.tag_only, &registry)?;
        println!("wrote {dir}/caption.jsonl and {dir}/tag_only.jsonl");
    }
    Ok(())
}
