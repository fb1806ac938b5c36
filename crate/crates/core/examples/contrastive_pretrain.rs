//! Contrastive training of the audio-text bi-encoder on captioned toy
//! clips, printing the validation trace.
//!
//! `cargo run --example contrastive_pretrain`

use audiotext::contrastive::{train_stage, TrainConfig};
use audiotext::encoders::BiEncoderModel;
use audiotext::pipeline::{caption_vocab, make_corpus, pair_set, split_of, FeatureBank, PipelineConfig, Profile};
use audiotext::evalsuite::retrieval_report;
use audiotext::toygen::{default_registry, Split};

fn main() -> audiotext::Result<()> {
    let cfg = PipelineConfig::profile(Profile::Desk);
    let registry = default_registry();
    let corpus = make_corpus(&cfg, &registry)?;
    let caption = &corpus.main.caption;
    let vocab = caption_vocab(&cfg, caption)?;
    let mut bank = FeatureBank::new(registry);
    let mut model = BiEncoderModel::new(&cfg.biencoder, vocab, 1)?;

    let train = pair_set(&model, &split_of(caption, Split::Train), &mut bank)?;
    let val = pair_set(&model, &split_of(caption, Split::Val), &mut bank)?;
    let test = pair_set(&model, &split_of(caption, Split::Test), &mut bank)?;
    let tc = TrainConfig { total_iters: 300, warmup_iters: 20, validate_every: 50, ..cfg.pretrain.stage1.clone() };
    let report = train_stage(&mut model, &train, &val, &tc, "demo")?;
    for row in report.trace.iter().filter(|r| r.val.is_some()) {
        let v = row.val.expect("filtered");
        println!("iter {:>4}: val loss {:.4}, R@1 a2t {:.2} t2a {:.2}", row.iter, v.loss, v.r1_a2t, v.r1_t2a);
    }
    println!("best at iter {}, temperature {:.4}", report.best_iter, model.temperature());
    for (k, v) in retrieval_report(&model, &test)? {
        println!("test {k}: {v:.3}");
    }
    Ok(())
}
