//! Linear probes on a frozen audio encoder: randomly initialized versus
//! contrastively trained. The encoder bytes are checked unchanged.
//!
//! `cargo run --example linear_probe`

use audiotext::contrastive::train_stage;
use audiotext::encoders::BiEncoderModel;
use audiotext::pipeline::{caption_vocab, classifier_stage, make_corpus, pair_set, split_of, FeatureBank, PipelineConfig, Profile};
use audiotext::toygen::{default_registry, Split};

fn main() -> audiotext::Result<()> {
    let cfg = PipelineConfig::profile(Profile::Desk);
    let registry = default_registry();
    let corpus = make_corpus(&cfg, &registry)?;
    let vocab = caption_vocab(&cfg, &corpus.main.caption)?;
    let mut bank = FeatureBank::new(registry);

    let mut random = BiEncoderModel::new(&cfg.biencoder, vocab.clone(), 9)?;
    let mut trained = random.clone();
    let train = pair_set(&trained, &split_of(&corpus.main.caption, Split::Train), &mut bank)?;
    let val = pair_set(&trained, &split_of(&corpus.main.caption, Split::Val), &mut bank)?;
    train_stage(&mut trained, &train, &val, &cfg.pretrain.stage1, "caption")?;

    for (name, model) in [("random", &mut random), ("trained", &mut trained)] {
        let before = model.params.fingerprint("");
        let report = classifier_stage(&cfg, model, &corpus, &mut bank, name)?;
        print!("{}", report.summary());
        assert_eq!(before, model.params.fingerprint(""));
    }
    Ok(())
}
