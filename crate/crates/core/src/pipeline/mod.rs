//! Configuration profiles and the end-to-end recipe tying corpora,
//! captioners, bootstrapping, pre-training and evaluation together.

mod commands;
mod config;
mod features;
mod run;

pub use config::{deep_merge, load_config, resolve, BootstrapConfig, CaptionerSection, CorpusSection, PathsSection, PipelineConfig, PretrainSection, Profile};
pub use commands::{gradcheck, gradcheck_table, Session};
pub use features::FeatureBank;
pub use run::{
    bootstrap_stage, caption_items, caption_vocab, captioner_stage, classifier_stage, eval_retrieval, eval_zero_shot, human_reference_scores,
    items_fingerprint, labeled_clips, make_corpus, pair_set, pretrain_stage, run_pipeline, split_of, CaptionTexts, transfer_stage,
    BootstrapOutcome, CaptionerOutcome, CorpusBundle, PipelineOutcome, PretrainOutcome, Progress, RunDir, TransferOutcome,
};
