//! The file-based steps behind each command-line subcommand. Every step
//! reads its inputs from the run directory (or the configured paths),
//! writes its artifacts there and returns the reports it produced.

use std::path::PathBuf;
use std::time::Instant;

use super::config::PipelineConfig;
use super::features::FeatureBank;
use super::run::{
    bootstrap_stage, caption_vocab, captioner_stage, classifier_stage, eval_retrieval, eval_zero_shot, human_reference_scores, make_corpus,
    pair_set, pretrain_stage, split_of, CaptionTexts, CaptionerOutcome, CorpusBundle, RunDir,
};
use crate::captioner::{self, caption_clip};
use crate::contrastive::{self};
use crate::diffcore::{gradient_suite, CheckStatus, SuiteEntry};
use crate::error::{Error, Result};
use crate::evalsuite::{bleu4_text, cider_text, finetune_retrieval, rouge_l_text, MetricReport};
use crate::textproc::Vocabulary;
use crate::toygen::{read_manifest, write_corpus, write_manifest, AudioTextExample, Corpora, EventRegistry, Split};

const CAPTION: &str = "corpus/caption.jsonl";
const TAG_ONLY: &str = "corpus/tag_only.jsonl";
const DOWNSTREAM: &str = "corpus/downstream.jsonl";
const CLASSIFICATION: &str = "corpus/classification.jsonl";
const CAPTION_TEXTS: &str = "corpus/caption_texts.json";
const SYNTHETIC: &str = "bootstrap/synthetic.jsonl";
const CAPTIONER: &str = "captioner/guided.ckpt";
const BIENCODER: &str = "pretrain/biencoder.ckpt";

/// One command invocation: resolved config, run directory and registry.
pub struct Session {
    pub cfg: PipelineConfig,
    pub dir: RunDir,
    pub registry: EventRegistry,
    bank: FeatureBank,
}

impl Session {
    pub fn new(cfg: PipelineConfig, dir: RunDir, registry: EventRegistry) -> Result<Self> {
        cfg.validate()?;
        dir.record_config(&cfg)?;
        Ok(Self { bank: FeatureBank::new(registry.clone()), cfg, dir, registry })
    }

    /// A configured input path, or its standard location; must exist.
    fn input(&self, field: &str, configured: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let p = configured.clone().unwrap_or_else(|| self.dir.path(default));
        if !p.exists() {
            return Err(Error::Config(format!("paths.{field}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    fn manifest(&self, field: &str, configured: &Option<PathBuf>, default: &str) -> Result<Vec<AudioTextExample>> {
        read_manifest(self.input(field, configured, default)?)
    }

    fn caption_corpus(&self) -> Result<Vec<AudioTextExample>> {
        self.manifest("caption_manifest", &self.cfg.paths.caption_manifest, CAPTION)
    }

    fn biencoder(&self) -> Result<(crate::encoders::BiEncoderModel, String)> {
        let p = self.input("biencoder_checkpoint", &self.cfg.paths.biencoder_checkpoint, BIENCODER)?;
        let bytes = std::fs::read(&p).map_err(|e| Error::file(&p, e))?;
        Ok((contrastive::load_checkpoint(&p)?, crate::checkpoint::sha256_hex(&bytes)))
    }

    fn classification(&self) -> Result<CorpusBundle> {
        let items = self.manifest("classification_manifest", &self.cfg.paths.classification_manifest, CLASSIFICATION)?;
        let mut labels: Vec<String> = items.iter().flat_map(|e| e.tags.iter().cloned()).collect();
        labels.sort();
        labels.dedup();
        Ok(CorpusBundle { main: Corpora { caption: vec![], tag_only: vec![] }, downstream: vec![], classification: items, labels })
    }

    fn finish(&self, mut reports: Vec<MetricReport>, start: Instant) -> Result<Vec<MetricReport>> {
        if let Some(last) = reports.last_mut() {
            if last.wall_clock_secs == 0.0 {
                last.wall_clock_secs = start.elapsed().as_secs_f64();
            }
        }
        for r in &reports {
            self.dir.write_report(r)?;
        }
        Ok(reports)
    }

    /// Renders every corpus to WAV files and JSON-lines manifests.
    pub fn make_corpus(&mut self) -> Result<Vec<MetricReport>> {
        let start = Instant::now();
        let bundle = make_corpus(&self.cfg, &self.registry)?;
        let corpus_dir = self.dir.path("corpus");
        let caption = write_corpus(&corpus_dir, "caption", &bundle.main.caption, &self.registry)?;
        write_corpus(&corpus_dir, "tag_only", &bundle.main.tag_only, &self.registry)?;
        write_corpus(&corpus_dir, "downstream", &bundle.downstream, &self.registry)?;
        write_corpus(&corpus_dir, "classification", &bundle.classification, &self.registry)?;
        self.dir.write_json(CAPTION_TEXTS, &CaptionTexts::from_scenes(&self.cfg, &self.registry, &bundle.main.caption)?)?;
        let fps = bundle.fingerprints()?;
        self.dir.write_json("corpus/fingerprints.json", &fps)?;
        let mut r = MetricReport::new("make-corpus", fps["caption"].clone(), "", self.cfg.seed)
            .with("caption_items", caption.len() as f64)
            .with("tag_only_items", bundle.main.tag_only.len() as f64)
            .with("downstream_items", bundle.downstream.len() as f64)
            .with("classification_items", bundle.classification.len() as f64)
            .with("classes", bundle.labels.len() as f64);
        r.wall_clock_secs = start.elapsed().as_secs_f64();
        self.finish(vec![r], start)
    }

    /// Stored template captions; an absent file means none.
    fn caption_texts(&self) -> Result<CaptionTexts> {
        let p = self.dir.path(CAPTION_TEXTS);
        match std::fs::read(&p) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(CaptionTexts::default()),
            Err(e) => Err(Error::file(&p, e)),
        }
    }

    fn vocab(&self, caption: &[AudioTextExample]) -> Result<Vocabulary> {
        let v = caption_vocab(&self.cfg, caption)?;
        v.save(self.dir.output("vocab.txt")?)?;
        Ok(v)
    }

    pub fn train_captioner(&mut self) -> Result<Vec<MetricReport>> {
        let start = Instant::now();
        let caption = self.caption_corpus()?;
        let vocab = self.vocab(&caption)?;
        let texts = self.caption_texts()?;
        let mut reports = Vec::new();
        let guided = captioner_stage(&self.cfg, &vocab, &caption, &texts, &mut self.bank, true)?;
        self.save_captioner(&guided, "guided")?;
        reports.push(guided.report);
        if self.cfg.captioner.ablation {
            let ablation = captioner_stage(&self.cfg, &vocab, &caption, &texts, &mut self.bank, false)?;
            self.save_captioner(&ablation, "ablation")?;
            reports.push(ablation.report);
        }
        self.finish(reports, start)
    }

    fn save_captioner(&self, out: &CaptionerOutcome, name: &str) -> Result<()> {
        captioner::save_checkpoint(&out.model, name, self.dir.output(&format!("captioner/{name}.ckpt"))?)?;
        captioner::write_captions(self.dir.output(&format!("captioner/{name}_test.jsonl"))?, &out.captions)?;
        self.dir.write_json(&format!("captioner/{name}_trace.json"), &out.trace)
    }

    fn captioner_outcome(&self) -> Result<CaptionerOutcome> {
        let p = self.input("captioner_checkpoint", &self.cfg.paths.captioner_checkpoint, CAPTIONER)?;
        let bytes = std::fs::read(&p).map_err(|e| Error::file(&p, e))?;
        let model = captioner::load_checkpoint(&p)?;
        Ok(CaptionerOutcome {
            model,
            trace: Default::default(),
            captions: vec![],
            report: MetricReport::new("captioner", "", "", self.cfg.seed),
            checkpoint_hash: crate::checkpoint::sha256_hex(&bytes),
        })
    }

    /// Captions the tag-only corpus and writes it as a synthetic manifest.
    pub fn bootstrap(&mut self) -> Result<Vec<MetricReport>> {
        let start = Instant::now();
        let tag_only = self.manifest("tag_only_manifest", &self.cfg.paths.tag_only_manifest, TAG_ONLY)?;
        let cap = self.captioner_outcome()?;
        let out = bootstrap_stage(&self.cfg, &cap, &tag_only, &mut self.bank)?;
        write_manifest(self.dir.output(SYNTHETIC)?, &out.synthetic)?;
        self.dir.write_json("bootstrap/forced.json", &out.generation.forced)?;
        self.finish(vec![out.report], start)
    }

    pub fn pretrain(&mut self) -> Result<Vec<MetricReport>> {
        let start = Instant::now();
        let synthetic = self.manifest("synthetic_manifest", &self.cfg.paths.synthetic_manifest, SYNTHETIC)?;
        let caption = self.caption_corpus()?;
        let vocab = self.vocab(&caption)?;
        let out = pretrain_stage(&self.cfg, &vocab, &synthetic, &caption, &mut self.bank)?;
        contrastive::save_checkpoint(&out.model, "stage2", self.dir.output(BIENCODER)?)?;
        contrastive::write_trace(self.dir.output("pretrain/stage1.csv")?, &out.report.stage1.trace)?;
        contrastive::write_trace(self.dir.output("pretrain/stage2.csv")?, &out.report.stage2.trace)?;
        self.finish(vec![out.metrics], start)
    }

    pub fn finetune_retrieval(&mut self) -> Result<Vec<MetricReport>> {
        let start = Instant::now();
        let (mut model, id) = self.biencoder()?;
        let items = self.manifest("downstream_manifest", &self.cfg.paths.downstream_manifest, DOWNSTREAM)?;
        let train = pair_set(&model, &split_of(&items, Split::Train), &mut self.bank)?;
        let val = pair_set(&model, &split_of(&items, Split::Val), &mut self.bank)?;
        let test = pair_set(&model, &split_of(&items, Split::Test), &mut self.bank)?;
        let out = finetune_retrieval(&mut model, &train, &val, &test, &self.cfg.finetune_retrieval)?;
        contrastive::save_checkpoint(&model, "finetune", self.dir.output("finetune/retrieval.ckpt")?)?;
        if let Some(stage) = &out.stage {
            contrastive::write_trace(self.dir.output("finetune/retrieval.csv")?, &stage.trace)?;
        }
        let mut r = MetricReport::new("finetune-retrieval", "downstream/test", id, self.cfg.seed);
        r.metrics = out.test;
        self.finish(vec![r], start)
    }

    pub fn finetune_classifier(&mut self) -> Result<Vec<MetricReport>> {
        let start = Instant::now();
        let (mut model, _) = self.biencoder()?;
        let bundle = self.classification()?;
        let r = classifier_stage(&self.cfg, &mut model, &bundle, &mut self.bank, "checkpoint")?;
        self.finish(vec![r], start)
    }

    pub fn eval_retrieval(&mut self) -> Result<Vec<MetricReport>> {
        let start = Instant::now();
        let (model, _) = self.biencoder()?;
        let test = split_of(&self.caption_corpus()?, Split::Test);
        let r = eval_retrieval(&self.cfg, &model, &test, "caption/test", &mut self.bank)?;
        self.finish(vec![r], start)
    }

    pub fn eval_zero_shot(&mut self) -> Result<Vec<MetricReport>> {
        let start = Instant::now();
        let (model, _) = self.biencoder()?;
        let bundle = self.classification()?;
        let r = eval_zero_shot(&self.cfg, &model, &bundle, &mut self.bank)?;
        self.finish(vec![r], start)
    }

    /// Captions the caption-corpus test split with the guided captioner and
    /// scores it against the stored references; also scores the references
    /// against each other.
    pub fn eval_caption(&mut self) -> Result<Vec<MetricReport>> {
        let start = Instant::now();
        let cap = self.captioner_outcome()?;
        let test = split_of(&self.caption_corpus()?, Split::Test);
        let references = self.caption_texts()?.references_for(&test)?;
        let model = &cap.model;
        let (mut cands, mut generated) = (Vec::new(), Vec::new());
        for e in &test {
            let mel = self.bank.mel(&model.cfg.frontend, model.cfg.sample_rate, e)?;
            let tags = model.tag_ids(&e.tags.iter().filter(|t| model.tags.binary_search(t).is_ok()).cloned().collect())?;
            let g = caption_clip(model, &e.clip_id, &mel, model.cfg.tag_guidance.then_some(tags.as_slice()), self.cfg.captioner.beam_size)?;
            cands.push(g.caption.clone());
            generated.push(g);
        }
        captioner::write_captions(self.dir.output("eval/captions.jsonl")?, &generated)?;
        let recovery = crate::bootstrap::tag_recovery_rate(&self.registry, generated.iter().zip(&test).map(|(g, e)| (g.caption.as_str(), &e.tags)));
        let mut r = MetricReport::new("eval-caption", "caption/test", cap.checkpoint_hash.clone(), self.cfg.seed)
            .with("bleu4", bleu4_text(&cands, &references)?)
            .with("rouge_l", rouge_l_text(&cands, &references)?)
            .with("cider", cider_text(&cands, &references)?)
            .with("tag_recovery", recovery);
        if references.iter().all(|r| r.len() == references[0].len() && r.len() >= 2) {
            r.metrics.extend(human_reference_scores(&references)?);
        }
        self.finish(vec![r], start)
    }
}

/// The finite-difference suite as a printable table.
pub fn gradcheck_table(entries: &[SuiteEntry]) -> String {
    let mut s = format!("{:<34} {:>4} {:>12}  status\n", "check", "case", "max rel err");
    for e in entries {
        let status = match e.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Excluded => "excluded",
        };
        s.push_str(&format!("{:<34} {:>4} {:>12.3e}  {status}\n", e.name, e.case, e.max_relative_error));
        if let Some(err) = &e.error {
            s.push_str(&format!("    {err}\n"));
        }
    }
    let failed = entries.iter().filter(|e| e.status != CheckStatus::Pass).count();
    s.push_str(&format!("{} checks, {} not passing\n", entries.len(), failed));
    s
}

/// Runs the suite; the report holds the worst error and the failure count.
pub fn gradcheck(seed: u64) -> (Vec<SuiteEntry>, MetricReport) {
    let start = Instant::now();
    let entries = gradient_suite();
    let worst = entries.iter().map(|e| e.max_relative_error).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let mut r = MetricReport::new("gradcheck", "suite", "", seed)
        .with("checks", entries.len() as f64)
        .with("failures", entries.iter().filter(|e| e.status != CheckStatus::Pass).count() as f64)
        .with("max_relative_error", worst);
    r.wall_clock_secs = start.elapsed().as_secs_f64();
    (entries, r)
}
