use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::features::FeatureBank;
use crate::audiofront::MelSpectrogram;
use crate::bootstrap::{filter_by_tag_vocab, generate_synthetic_corpus, tag_recovery_rate, tag_vocabulary, BootstrapReport, FilterReport};
use crate::captioner::{self, caption_clip, evaluate_ce, train_captioner, CaptionItem, CaptionModel, CaptionTrace, GeneratedCaption};
use crate::contrastive::{self, pretrain_two_stage, PairSet, PretrainReport};
use crate::encoders::{BiEncoderModel, LOG_TEMPERATURE};
use crate::error::{Error, Result};
use crate::evalsuite::{
    accuracy, bleu4_text, cider_text, evaluate_classifier, finetune_retrieval, retrieval_report, rouge_l_text, round_robin_eval,
    train_classifier, zero_shot_classify, LabeledClip, MetricReport,
};
use crate::seeding::child_seed;
use crate::textproc::{build_vocab, Vocabulary};
use crate::toygen::{alternate_captions, classification_set, generate_corpus, AudioSource, AudioTextExample, Corpora, EventRegistry, Split};

/// Every dataset of one run.
#[derive(Clone, Debug)]
pub struct CorpusBundle {
    pub main: Corpora,
    /// Retrieval fine-tuning target; ids carry a `ds-` prefix.
    pub downstream: Vec<AudioTextExample>,
    /// Single-event clips; the tag is the label.
    pub classification: Vec<AudioTextExample>,
    /// Classification label set, sorted.
    pub labels: Vec<String>,
}

impl CorpusBundle {
    /// SHA-256 per dataset over ids, splits, captions, tags and audio recipes.
    pub fn fingerprints(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (name, items) in [
            ("caption", &self.main.caption),
            ("tag_only", &self.main.tag_only),
            ("downstream", &self.downstream),
            ("classification", &self.classification),
        ] {
            out.insert(name.to_string(), items_fingerprint(items)?);
        }
        Ok(out)
    }

    pub fn class_of(&self, ex: &AudioTextExample) -> Result<usize> {
        let tag = ex.tags.iter().next().ok_or_else(|| Error::Data(format!("clip `{}` has no label", ex.clip_id)))?;
        self.labels.binary_search(tag).map_err(|_| Error::Data(format!("clip `{}`: `{tag}` is not a class", ex.clip_id)))
    }
}

pub fn items_fingerprint(items: &[AudioTextExample]) -> Result<String> {
    let mut h = Sha256::new();
    for e in items {
        let audio = match &e.audio {
            AudioSource::Wav(p) => serde_json::to_value(p.file_name().map(|n| n.to_string_lossy().into_owned()))?,
            AudioSource::Scene(r) => serde_json::to_value(r)?,
        };
        let row = serde_json::json!([e.clip_id, e.split, e.caption, e.tags, e.provenance, audio]);
        h.update(serde_json::to_vec(&row)?);
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

pub fn split_of(items: &[AudioTextExample], split: Split) -> Vec<AudioTextExample> {
    items.iter().filter(|e| e.split == split).cloned().collect()
}

pub fn make_corpus(cfg: &PipelineConfig, registry: &EventRegistry) -> Result<CorpusBundle> {
    let main = generate_corpus(registry, &cfg.corpus.main, cfg.seed)?;
    let mut downstream = generate_corpus(registry, &cfg.corpus.downstream, child_seed(cfg.seed, "downstream", 0))?.caption;
    for e in &mut downstream {
        e.clip_id = format!("ds-{}", e.clip_id);
    }
    let labels: Vec<String> = registry.ids().into_iter().filter(|id| !cfg.corpus.main.tag_holdout.contains(id)).collect::<BTreeSet<_>>().into_iter().collect();
    let classification = classification_set(registry, &labels, &cfg.corpus.classification, child_seed(cfg.seed, "classification", 0))?
        .into_iter()
        .map(|(e, _)| e)
        .collect();
    Ok(CorpusBundle { main, downstream, classification, labels })
}

/// Token vocabulary of the captioned training split.
pub fn caption_vocab(cfg: &PipelineConfig, caption_corpus: &[AudioTextExample]) -> Result<Vocabulary> {
    let texts = split_of(caption_corpus, Split::Train).iter().map(|e| e.caption_text().map(str::to_string)).collect::<Result<Vec<_>>>()?;
    build_vocab(&texts, cfg.corpus.vocab_min_count)
}

pub fn caption_items(model: &CaptionModel, items: &[AudioTextExample], bank: &mut FeatureBank) -> Result<Vec<CaptionItem>> {
    items
        .iter()
        .map(|e| {
            let known: BTreeSet<String> = e.tags.iter().filter(|t| model.tags.binary_search(t).is_ok()).cloned().collect();
            Ok(CaptionItem {
                clip_id: e.clip_id.clone(),
                mel: bank.mel(&model.cfg.frontend, model.cfg.sample_rate, e)?,
                caption: crate::textproc::tokenize(e.caption_text()?, &model.vocab),
                tags: model.tag_ids(&known)?,
            })
        })
        .collect()
}

pub fn pair_set(model: &BiEncoderModel, items: &[AudioTextExample], bank: &mut FeatureBank) -> Result<PairSet> {
    let mut set = PairSet::default();
    for e in items {
        set.push(e.clip_id.clone(), bank.mel(&model.cfg.frontend, model.cfg.sample_rate, e)?, model.tokenize(e.caption_text()?));
    }
    Ok(set)
}

fn elapsed(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

#[derive(Clone, Debug)]
pub struct CaptionerOutcome {
    pub model: CaptionModel,
    pub trace: CaptionTrace,
    pub captions: Vec<GeneratedCaption>,
    pub report: MetricReport,
    pub checkpoint_hash: String,
}

/// Trains one captioner (tag-guided or not) on the caption corpus and scores
/// it on the test split: teacher-forced CE, tag recovery and caption metrics
/// against template references.
pub fn captioner_stage(
    cfg: &PipelineConfig,
    vocab: &Vocabulary,
    caption_corpus: &[AudioTextExample],
    texts: &CaptionTexts,
    bank: &mut FeatureBank,
    guided: bool,
) -> Result<CaptionerOutcome> {
    let start = Instant::now();
    let tags: Vec<String> = tag_vocabulary(caption_corpus).into_iter().collect();
    let mcfg = crate::captioner::CaptionModelConfig { tag_guidance: guided, ..cfg.captioner.model.clone() };
    let name = if guided { "guided" } else { "ablation" };
    let mut model = CaptionModel::new(&mcfg, vocab.clone(), tags, child_seed(cfg.seed, "captioner-init", guided as u64))?;
    let train_ex = split_of(caption_corpus, Split::Train);
    let mut train = caption_items(&model, &train_ex, bank)?;
    let base = train.clone();
    for it in &base {
        for alt in texts.alternates.get(&it.clip_id).into_iter().flatten() {
            train.push(CaptionItem { caption: crate::textproc::tokenize(alt, &model.vocab), ..it.clone() });
        }
    }
    let val = caption_items(&model, &split_of(caption_corpus, Split::Val), bank)?;
    let test_ex = split_of(caption_corpus, Split::Test);
    let test = caption_items(&model, &test_ex, bank)?;
    let trace = train_captioner(&mut model, &train, &val, &cfg.captioner.train)?;
    let test_ce = evaluate_ce(&model, &test, cfg.captioner.train.batch_size)?;

    let mut captions = Vec::with_capacity(test.len());
    for it in &test {
        captions.push(caption_clip(&model, &it.clip_id, &it.mel, guided.then_some(it.tags.as_slice()), cfg.captioner.beam_size)?);
    }
    let registry = bank.registry();
    let recovery = tag_recovery_rate(registry, captions.iter().zip(&test_ex).map(|(c, e)| (c.caption.as_str(), &e.tags)));
    let references = texts.references_for(&test_ex)?;
    let cands: Vec<String> = captions.iter().map(|c| c.caption.clone()).collect();
    let checkpoint_hash = crate::checkpoint::sha256_hex(&captioner::checkpoint_bytes(&model, name)?);
    let mut report = MetricReport::new(format!("captioner-{name}"), "caption/test", checkpoint_hash.clone(), cfg.seed)
        .with("test_ce", test_ce)
        .with("best_val_ce", trace.best_val_ce)
        .with("tag_recovery", recovery)
        .with("bleu4", bleu4_text(&cands, &references)?)
        .with("rouge_l", rouge_l_text(&cands, &references)?)
        .with("cider", cider_text(&cands, &references)?)
        .with("forced", captions.iter().filter(|c| c.forced).count() as f64);
    report.wall_clock_secs = elapsed(start);
    report.validate()?;
    Ok(CaptionerOutcome { model, trace, captions, report, checkpoint_hash })
}

/// Template captions beyond the one each clip carries: extra training
/// captions and test references. Only rendered scenes get any, so the map
/// is built once and stored next to the manifests.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CaptionTexts {
    pub alternates: BTreeMap<String, Vec<String>>,
    /// Full reference sets (corpus caption first) for test clips.
    pub references: BTreeMap<String, Vec<String>>,
}

impl CaptionTexts {
    pub fn from_scenes(cfg: &PipelineConfig, registry: &EventRegistry, caption_corpus: &[AudioTextExample]) -> Result<Self> {
        let mut out = Self::default();
        for e in caption_corpus {
            let AudioSource::Scene(r) = &e.audio else { continue };
            match e.split {
                Split::Train if cfg.captioner.captions_per_clip > 1 => {
                    let seed = child_seed(cfg.seed, &format!("train-{}", e.clip_id), 0);
                    out.alternates.insert(e.clip_id.clone(), alternate_captions(registry, r, seed, cfg.captioner.captions_per_clip - 1)?);
                }
                Split::Test => {
                    let mut refs = vec![e.caption_text()?.to_string()];
                    refs.extend(alternate_captions(registry, r, child_seed(cfg.seed, &e.clip_id, 0), cfg.captioner.references - 1)?);
                    out.references.insert(e.clip_id.clone(), refs);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Reference set per item; clips without stored references use their
    /// own caption alone.
    pub fn references_for(&self, items: &[AudioTextExample]) -> Result<Vec<Vec<String>>> {
        items
            .iter()
            .map(|e| match self.references.get(&e.clip_id) {
                Some(r) => Ok(r.clone()),
                None => Ok(vec![e.caption_text()?.to_string()]),
            })
            .collect()
    }
}

/// Scores of each metric when every reference in turn plays the candidate.
pub fn human_reference_scores(references: &[Vec<String>]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    out.insert("human_bleu4".into(), round_robin_eval(references, &bleu4_text)?);
    out.insert("human_rouge_l".into(), round_robin_eval(references, &rouge_l_text)?);
    out.insert("human_cider".into(), round_robin_eval(references, &cider_text)?);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct BootstrapOutcome {
    pub synthetic: Vec<AudioTextExample>,
    pub filter: FilterReport,
    pub generation: BootstrapReport,
    pub report: MetricReport,
}

pub fn bootstrap_stage(cfg: &PipelineConfig, captioner: &CaptionerOutcome, tag_only: &[AudioTextExample], bank: &mut FeatureBank) -> Result<BootstrapOutcome> {
    let start = Instant::now();
    let known: BTreeSet<String> = captioner.model.tags.iter().cloned().collect();
    let (kept, filter) = filter_by_tag_vocab(tag_only, &known, cfg.bootstrap.filter);
    let model = &captioner.model;
    let (synthetic, generation) = generate_synthetic_corpus(
        model,
        &kept,
        &mut |e: &AudioTextExample| bank.mel(&model.cfg.frontend, model.cfg.sample_rate, e),
        cfg.bootstrap.beam_size,
    )?;
    let recovery = tag_recovery_rate(bank.registry(), synthetic.iter().map(|e| (e.caption.as_deref().unwrap_or(""), &e.tags)));
    let mut report = MetricReport::new("bootstrap", "tag_only", captioner.checkpoint_hash.clone(), cfg.seed)
        .with("kept", filter.kept as f64)
        .with("dropped", filter.dropped as f64)
        .with("tag_recovery", recovery)
        .with("forced", generation.forced.len() as f64);
    report.wall_clock_secs = elapsed(start);
    Ok(BootstrapOutcome { synthetic, filter, generation, report })
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: BiEncoderModel,
    pub report: PretrainReport,
    pub metrics: MetricReport,
    pub checkpoint_hash: String,
}

/// Two-stage contrastive pre-training: synthetic pairs, then real pairs.
pub fn pretrain_stage(
    cfg: &PipelineConfig,
    vocab: &Vocabulary,
    synthetic: &[AudioTextExample],
    caption_corpus: &[AudioTextExample],
    bank: &mut FeatureBank,
) -> Result<PretrainOutcome> {
    let start = Instant::now();
    let mut model = BiEncoderModel::new(&cfg.biencoder, vocab.clone(), child_seed(cfg.seed, "biencoder-init", 0))?;
    let syn_train = pair_set(&model, &split_of(synthetic, Split::Train), bank)?;
    let syn_val = pair_set(&model, &split_of(synthetic, Split::Val), bank)?;
    let real_train = pair_set(&model, &split_of(caption_corpus, Split::Train), bank)?;
    let real_val = pair_set(&model, &split_of(caption_corpus, Split::Val), bank)?;
    let report = pretrain_two_stage(&mut model, (&syn_train, &syn_val), (&real_train, &real_val), &cfg.pretrain.stage1, &cfg.pretrain.stage2)?;
    let checkpoint_hash = crate::checkpoint::sha256_hex(&contrastive::checkpoint_bytes(&model, "stage2")?);
    let mut metrics = MetricReport::new("pretrain", "synthetic+caption", checkpoint_hash.clone(), cfg.seed)
        .with("stage1_best_val_r@1", report.stage1.best.mean_r1())
        .with("stage2_best_val_r@1", report.stage2.best.mean_r1())
        .with("stage2_best_val_loss", report.stage2.best.loss)
        .with("temperature", model.temperature());
    metrics.wall_clock_secs = elapsed(start);
    Ok(PretrainOutcome { model, report, metrics, checkpoint_hash })
}

fn model_id(model: &BiEncoderModel) -> Result<String> {
    Ok(crate::checkpoint::sha256_hex(&contrastive::checkpoint_bytes(model, "eval")?))
}

pub fn eval_retrieval(cfg: &PipelineConfig, model: &BiEncoderModel, items: &[AudioTextExample], dataset: &str, bank: &mut FeatureBank) -> Result<MetricReport> {
    let start = Instant::now();
    let pairs = pair_set(model, items, bank)?;
    let mut r = MetricReport::new("eval-retrieval", dataset, model_id(model)?, cfg.seed);
    r.metrics = retrieval_report(model, &pairs)?;
    r.wall_clock_secs = elapsed(start);
    r.validate()?;
    Ok(r)
}

pub fn labeled_clips(model: &BiEncoderModel, corpus: &CorpusBundle, split: Split, bank: &mut FeatureBank) -> Result<Vec<LabeledClip>> {
    corpus
        .classification
        .iter()
        .filter(|e| e.split == split)
        .map(|e| Ok(LabeledClip { mel: bank.mel(&model.cfg.frontend, model.cfg.sample_rate, e)?, labels: vec![corpus.class_of(e)?] }))
        .collect()
}

pub fn eval_zero_shot(cfg: &PipelineConfig, model: &BiEncoderModel, corpus: &CorpusBundle, bank: &mut FeatureBank) -> Result<MetricReport> {
    let start = Instant::now();
    let clips = labeled_clips(model, corpus, Split::Test, bank)?;
    let mels: Vec<&MelSpectrogram> = clips.iter().map(|c| c.mel.as_ref()).collect();
    let zs = zero_shot_classify(model, &mels, &corpus.labels)?;
    let truth: Vec<usize> = clips.iter().map(|c| c.labels[0]).collect();
    let mut r = MetricReport::new("eval-zero-shot", "classification/test", model_id(model)?, cfg.seed)
        .with("accuracy", accuracy(&zs.predictions, &truth)?)
        .with("classes", corpus.labels.len() as f64);
    r.wall_clock_secs = elapsed(start);
    r.validate()?;
    Ok(r)
}

/// Trains the configured head on the classification train split and
/// reports test accuracy. `model` changes only in fine-tune mode.
pub fn classifier_stage(cfg: &PipelineConfig, model: &mut BiEncoderModel, corpus: &CorpusBundle, bank: &mut FeatureBank, tag: &str) -> Result<MetricReport> {
    let start = Instant::now();
    let train = labeled_clips(model, corpus, Split::Train, bank)?;
    let test = labeled_clips(model, corpus, Split::Test, bank)?;
    let id = model_id(model)?;
    let out = train_classifier(model, corpus.labels.len(), &train, &cfg.classifier)?;
    let mode = serde_json::to_value(cfg.classifier.mode)?;
    let mut r = MetricReport::new(format!("classifier-{}-{tag}", mode.as_str().unwrap_or("head")), "classification/test", id, cfg.seed)
        .with("accuracy", evaluate_classifier(model, &out.classifier, &test)?)
        .with("train_accuracy", evaluate_classifier(model, &out.classifier, &train)?)
        .with("encoder_unchanged", (out.encoder_before == out.encoder_after) as u8 as f64);
    r.wall_clock_secs = elapsed(start);
    Ok(r)
}

#[derive(Clone, Debug)]
pub struct TransferOutcome {
    pub pretrained: crate::evalsuite::FinetuneOutcome,
    pub scratch: crate::evalsuite::FinetuneOutcome,
    pub report: MetricReport,
}

/// Retrieval fine-tuning on the downstream corpus from the pre-trained
/// weights and from a fresh initialisation with the same schedule. Reports
/// how many iterations the pre-trained run needs to match the scratch run's
/// best validation R@1.
pub fn transfer_stage(cfg: &PipelineConfig, pretrained: &BiEncoderModel, corpus: &CorpusBundle, bank: &mut FeatureBank) -> Result<TransferOutcome> {
    let start = Instant::now();
    let train = pair_set(pretrained, &split_of(&corpus.downstream, Split::Train), bank)?;
    let val = pair_set(pretrained, &split_of(&corpus.downstream, Split::Val), bank)?;
    let test = pair_set(pretrained, &split_of(&corpus.downstream, Split::Test), bank)?;
    let mut warm = pretrained.clone();
    let warm_out = finetune_retrieval(&mut warm, &train, &val, &test, &cfg.finetune_retrieval)?;
    let mut cold = BiEncoderModel::new(&cfg.biencoder, pretrained.vocab.clone(), child_seed(cfg.seed, "scratch-init", 0))?;
    let cold_out = finetune_retrieval(&mut cold, &train, &val, &test, &cfg.finetune_retrieval)?;
    let (Some(ws), Some(cs)) = (&warm_out.stage, &cold_out.stage) else {
        return Err(Error::Config("finetune_retrieval.epochs must be positive for the transfer comparison".into()));
    };
    let target = cs.best.mean_r1();
    let warm_iters = ws.iters_to_reach(target);
    let mut r = MetricReport::new("transfer", "downstream", model_id(pretrained)?, cfg.seed)
        .with("scratch_best_val_r@1", target)
        .with("scratch_best_iter", cs.best_iter as f64)
        .with("pretrained_best_val_r@1", ws.best.mean_r1())
        .with("pretrained_initial_val_r@1", ws.initial.mean_r1())
        .with("pretrained_iters_to_match", warm_iters.map_or(f64::INFINITY, |i| i as f64).min(1e12))
        .with("pretrained_matched", warm_iters.is_some() as u8 as f64);
    for (k, v) in &warm_out.test {
        r.metrics.insert(format!("pretrained_test_{k}"), *v);
    }
    for (k, v) in &cold_out.test {
        r.metrics.insert(format!("scratch_test_{k}"), *v);
    }
    r.wall_clock_secs = elapsed(start);
    Ok(TransferOutcome { pretrained: warm_out, scratch: cold_out, report: r })
}

/// Result of [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub corpus_fingerprints: BTreeMap<String, String>,
    pub guided: MetricReport,
    pub ablation: Option<MetricReport>,
    pub bootstrap: MetricReport,
    pub bootstrap_filter: FilterReport,
    pub pretrain: MetricReport,
    pub checkpoint_hash: String,
    pub zero_shot: MetricReport,
    pub retrieval: MetricReport,
    pub probe_pretrained: MetricReport,
    pub probe_random: MetricReport,
    pub transfer: MetricReport,
    pub synthetic_pairs: usize,
}

impl PipelineOutcome {
    pub fn reports(&self) -> Vec<&MetricReport> {
        let mut v = vec![&self.guided];
        v.extend(self.ablation.as_ref());
        v.extend([&self.bootstrap, &self.pretrain, &self.zero_shot, &self.retrieval, &self.probe_pretrained, &self.probe_random, &self.transfer]);
        v
    }
}

/// Where a run's artifacts go.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root).map_err(|e| Error::file(&root, e))?;
        Ok(Self { root })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Like `path`, creating the parent directory.
    pub fn output(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
        Ok(p)
    }

    pub fn write_json<T: serde::Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let p = self.output(rel)?;
        std::fs::write(&p, serde_json::to_vec_pretty(value)?).map_err(|e| Error::file(&p, e))
    }

    pub fn write_report(&self, report: &MetricReport) -> Result<()> {
        report.save(self.path(&format!("reports/{}.json", report.task)))
    }

    /// Resolved config and seed, so the run can be repeated.
    pub fn record_config(&self, cfg: &PipelineConfig) -> Result<()> {
        self.write_json("config.json", cfg)?;
        std::fs::write(self.path("seed"), format!("{}\n", cfg.seed)).map_err(|e| Error::file(self.path("seed"), e))
    }
}

/// Hooks for watching a long run.
pub trait Progress {
    fn stage(&mut self, _name: &str, _secs: f64) {}
}

impl Progress for () {}

/// The whole recipe in memory: corpora, both captioners, bootstrapping,
/// two-stage pre-training and every evaluation. With `out`, checkpoints,
/// traces and reports are written there as well.
pub fn run_pipeline(cfg: &PipelineConfig, registry: &EventRegistry, out: Option<&RunDir>, progress: &mut dyn Progress) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let mut clock = Instant::now();
    let mut tick = |name: &str, progress: &mut dyn Progress| {
        progress.stage(name, clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };
    let mut bank = FeatureBank::new(registry.clone());
    let corpus = make_corpus(cfg, registry)?;
    let corpus_fingerprints = corpus.fingerprints()?;
    let vocab = caption_vocab(cfg, &corpus.main.caption)?;
    if let Some(dir) = out {
        dir.record_config(cfg)?;
        dir.write_json("corpus/fingerprints.json", &corpus_fingerprints)?;
        vocab.save(dir.path("vocab.txt"))?;
    }
    tick("corpus", progress);

    let texts = CaptionTexts::from_scenes(cfg, registry, &corpus.main.caption)?;
    let guided = captioner_stage(cfg, &vocab, &corpus.main.caption, &texts, &mut bank, true)?;
    tick("captioner-guided", progress);
    let ablation = if cfg.captioner.ablation {
        let a = captioner_stage(cfg, &vocab, &corpus.main.caption, &texts, &mut bank, false)?;
        tick("captioner-ablation", progress);
        Some(a)
    } else {
        None
    };
    let boot = bootstrap_stage(cfg, &guided, &corpus.main.tag_only, &mut bank)?;
    tick("bootstrap", progress);
    let pre = pretrain_stage(cfg, &vocab, &boot.synthetic, &corpus.main.caption, &mut bank)?;
    tick("pretrain", progress);

    let zero_shot = eval_zero_shot(cfg, &pre.model, &corpus, &mut bank)?;
    let retrieval = eval_retrieval(cfg, &pre.model, &split_of(&corpus.main.caption, Split::Test), "caption/test", &mut bank)?;
    tick("evaluation", progress);
    let mut probe_cfg = cfg.clone();
    probe_cfg.classifier.mode = crate::evalsuite::HeadMode::LinearProbe;
    let mut probed = pre.model.clone();
    let probe_pretrained = classifier_stage(&probe_cfg, &mut probed, &corpus, &mut bank, "pretrained")?;
    let mut random = BiEncoderModel::new(&cfg.biencoder, vocab.clone(), child_seed(cfg.seed, "probe-random-init", 0))?;
    let probe_random = classifier_stage(&probe_cfg, &mut random, &corpus, &mut bank, "random")?;
    tick("probe", progress);
    let transfer = transfer_stage(cfg, &pre.model, &corpus, &mut bank)?;
    tick("transfer", progress);

    if let Some(dir) = out {
        captioner::save_checkpoint(&guided.model, "guided", dir.output("captioner/guided.ckpt")?)?;
        captioner::write_captions(dir.output("captioner/guided_test.jsonl")?, &guided.captions)?;
        dir.write_json("captioner/guided_trace.json", &guided.trace)?;
        if let Some(a) = &ablation {
            captioner::save_checkpoint(&a.model, "ablation", dir.output("captioner/ablation.ckpt")?)?;
            captioner::write_captions(dir.output("captioner/ablation_test.jsonl")?, &a.captions)?;
        }
        let synth: Vec<GeneratedCaption> = boot
            .synthetic
            .iter()
            .map(|e| GeneratedCaption { clip_id: e.clip_id.clone(), caption: e.caption.clone().unwrap_or_default(), score: 0.0, forced: boot.generation.forced.contains(&e.clip_id) })
            .collect();
        captioner::write_captions(dir.output("bootstrap/synthetic_captions.jsonl")?, &synth)?;
        contrastive::save_checkpoint(&pre.model, "stage2", dir.output("pretrain/biencoder.ckpt")?)?;
        contrastive::write_trace(dir.output("pretrain/stage1.csv")?, &pre.report.stage1.trace)?;
        contrastive::write_trace(dir.output("pretrain/stage2.csv")?, &pre.report.stage2.trace)?;
    }
    let outcome = PipelineOutcome {
        corpus_fingerprints,
        guided: guided.report,
        ablation: ablation.map(|a| a.report),
        bootstrap: boot.report,
        bootstrap_filter: boot.filter,
        pretrain: pre.metrics,
        checkpoint_hash: pre.checkpoint_hash,
        zero_shot,
        retrieval,
        probe_pretrained,
        probe_random,
        transfer: transfer.report,
        synthetic_pairs: boot.synthetic.len(),
    };
    if let Some(dir) = out {
        for r in outcome.reports() {
            dir.write_report(r)?;
        }
    }
    debug_assert!(pre.model.params.get(LOG_TEMPERATURE).is_some());
    Ok(outcome)
}
