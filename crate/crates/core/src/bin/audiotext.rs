use std::path::PathBuf;
use std::process::ExitCode;

use audiotext::diffcore::CheckStatus;
use audiotext::evalsuite::MetricReport;
use audiotext::pipeline::{gradcheck, gradcheck_table, load_config, Profile, RunDir, Session};
use audiotext::toygen::default_registry;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "audiotext", version, about = "Audio-text pre-training on procedural audio")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON file of overrides applied on top of the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory shared by the steps of one experiment.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
}

#[derive(Subcommand)]
enum Command {
    /// Render the caption, tag-only, downstream and classification corpora.
    MakeCorpus(Common),
    /// Train the tag-guided captioner (and the ablation when enabled).
    TrainCaptioner(Common),
    /// Caption the tag-only corpus into a synthetic manifest.
    Bootstrap(Common),
    /// Two-stage contrastive pre-training.
    Pretrain(Common),
    /// Fine-tune the bi-encoder on the downstream caption corpus.
    FinetuneRetrieval(Common),
    /// Linear probe or full fine-tune, chosen by `classifier.mode`.
    FinetuneClassifier(Common),
    /// Recall@K on the caption-corpus test split.
    EvalRetrieval(Common),
    /// Zero-shot classification with label prompts.
    EvalZeroShot(Common),
    /// Caption metrics for the guided captioner, with reference agreement.
    EvalCaption(Common),
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_reports(reports: &[MetricReport]) {
    for r in reports {
        print!("{}", r.summary());
    }
}

fn run(command: Command) -> audiotext::Result<bool> {
    let (common, step): (Common, fn(&mut Session) -> audiotext::Result<Vec<MetricReport>>) = match command {
        Command::Gradcheck { seed } => {
            let (entries, report) = gradcheck(seed);
            print!("{}", gradcheck_table(&entries));
            print_reports(&[report]);
            return Ok(entries.iter().all(|e| e.status == CheckStatus::Pass));
        }
        Command::MakeCorpus(c) => (c, Session::make_corpus),
        Command::TrainCaptioner(c) => (c, Session::train_captioner),
        Command::Bootstrap(c) => (c, Session::bootstrap),
        Command::Pretrain(c) => (c, Session::pretrain),
        Command::FinetuneRetrieval(c) => (c, Session::finetune_retrieval),
        Command::FinetuneClassifier(c) => (c, Session::finetune_classifier),
        Command::EvalRetrieval(c) => (c, Session::eval_retrieval),
        Command::EvalZeroShot(c) => (c, Session::eval_zero_shot),
        Command::EvalCaption(c) => (c, Session::eval_caption),
    };
    let cfg = load_config(common.config.as_deref(), common.profile, common.seed)?;
    let mut session = Session::new(cfg, RunDir::create(&common.out)?, default_registry())?;
    print_reports(&step(&mut session)?);
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
