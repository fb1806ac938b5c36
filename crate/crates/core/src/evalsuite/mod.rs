//! Downstream evaluation: retrieval, classification and caption metrics.

mod captions;
mod classify;
mod ranking;
mod report;
mod retrieval;

pub use captions::{
    bleu4, bleu4_text, cider, cider_text, corpus_bleu4, rouge_l, rouge_l_text, round_robin_eval, CiderScores, CorpusMetric, CIDER_SIGMA,
    ROUGE_BETA,
};
pub use classify::{
    accuracy, evaluate_classifier, train_classifier, zero_shot_classify, Classifier, ClassifierConfig, ClassifierOutcome, HeadMode,
    LabeledClip, TaskKind, ZeroShot,
};
pub use ranking::{argmax, diagonal_ranks, mean_average_precision, rank_of, recall_at_k, Direction};
pub use report::{median, seed_stats, summarize_seeds, MetricReport, SeedSummary};
pub use retrieval::{finetune_retrieval, retrieval_report, FinetuneConfig, FinetuneOutcome, RECALL_KS};
