//! Pre-trains briefly on captioned clips, then classifies single-event
//! clips by comparing them with the text of every class label.
//!
//! `cargo run --example zero_shot`

use audiotext::contrastive::train_stage;
use audiotext::encoders::{BiEncoder, BiEncoderModel};
use audiotext::evalsuite::{accuracy, zero_shot_classify};
use audiotext::pipeline::{caption_vocab, make_corpus, pair_set, split_of, FeatureBank, PipelineConfig, Profile};
use audiotext::textproc::label_to_text;
use audiotext::toygen::{default_registry, Split};

fn main() -> audiotext::Result<()> {
    let cfg = PipelineConfig::profile(Profile::Desk);
    let registry = default_registry();
    let corpus = make_corpus(&cfg, &registry)?;
    let vocab = caption_vocab(&cfg, &corpus.main.caption)?;
    let mut bank = FeatureBank::new(registry);
    let mut model = BiEncoderModel::new(&cfg.biencoder, vocab, 3)?;
    let train = pair_set(&model, &split_of(&corpus.main.caption, Split::Train), &mut bank)?;
    let val = pair_set(&model, &split_of(&corpus.main.caption, Split::Val), &mut bank)?;
    train_stage(&mut model, &train, &val, &cfg.pretrain.stage1, "caption")?;

    let test = split_of(&corpus.classification, Split::Test);
    let mels = test.iter().map(|e| bank.mel(&cfg.biencoder.frontend, cfg.biencoder.sample_rate, e)).collect::<audiotext::Result<Vec<_>>>()?;
    let refs: Vec<_> = mels.iter().map(|m| m.as_ref()).collect();
    let zs = zero_shot_classify(&model as &dyn BiEncoder, &refs, &corpus.labels)?;
    let truth = test.iter().map(|e| corpus.class_of(e)).collect::<audiotext::Result<Vec<_>>>()?;
    println!("prompts: {:?}", corpus.labels.iter().map(|l| label_to_text(l)).collect::<Vec<_>>());
    println!("zero-shot accuracy over {} classes: {:.3}", corpus.labels.len(), accuracy(&zs.predictions, &truth)?);
    Ok(())
}
