use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ranking::{argmax, mean_average_precision};
use crate::audiofront::MelSpectrogram;
use crate::contrastive::cosine_scores;
use crate::diffcore::layers::Linear;
use crate::diffcore::{adam_step, AdamConfig, Ctx, Mode, OptimizerState, ParamStore, Tape, Tensor, Var};
use crate::encoders::{BiEncoder, BiEncoderModel, LOG_TEMPERATURE};
use crate::error::{Error, Result};
use crate::seeding::rng_for;
use crate::textproc::label_to_text;

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShot {
    /// `[clips, labels]` cosine similarities.
    pub scores: Tensor,
    pub predictions: Vec<usize>,
}

/// Scores clips against label prompts; each distinct prompt is encoded once.
pub fn zero_shot_classify(model: &dyn BiEncoder, mels: &[&MelSpectrogram], labels: &[String]) -> Result<ZeroShot> {
    if labels.is_empty() {
        return Err(Error::Config("zero-shot classification needs at least one label".into()));
    }
    let texts: Vec<String> = labels.iter().map(|l| label_to_text(l)).collect();
    let mut unique: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &texts {
        let next = unique.len();
        unique.entry(t.as_str()).or_insert(next);
    }
    let mut distinct = vec![String::new(); unique.len()];
    for (t, &i) in &unique {
        distinct[i] = t.to_string();
    }
    let emb = model.embed_text(&distinct)?;
    let rows: Vec<f64> = texts.iter().flat_map(|t| emb.row(unique[t.as_str()]).to_vec()).collect();
    let label_emb = Tensor::matrix(texts.len(), emb.cols(), rows)?;
    let scores = cosine_scores(&model.embed_audio(mels)?, &label_emb)?;
    let predictions = (0..scores.rows()).map(|i| argmax(scores.row(i))).collect();
    Ok(ZeroShot { scores, predictions })
}

pub fn accuracy(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if predictions.len() != truth.len() || truth.is_empty() {
        return Err(Error::Data(format!("{} predictions for {} labels", predictions.len(), truth.len())));
    }
    Ok(predictions.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Only the head trains; the encoder is a fixed feature extractor.
    LinearProbe,
    /// Head and audio encoder train together.
    FineTune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Softmax cross entropy, one label per clip.
    SingleLabel,
    /// Per-class sigmoid binary cross entropy.
    MultiLabel,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub mode: HeadMode,
    pub task: TaskKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct LabeledClip {
    pub mel: Arc<MelSpectrogram>,
    pub labels: Vec<usize>,
}

/// A fully connected layer from the audio embedding to class logits.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub classes: usize,
    pub task: TaskKind,
    pub params: ParamStore,
    layer: Linear,
}

const HEAD: &str = "head.fc";

impl Classifier {
    pub fn new(embed_dim: usize, classes: usize, task: TaskKind, seed: u64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("classifier needs at least one class".into()));
        }
        let layer = Linear::new(HEAD, embed_dim, classes);
        let mut params = ParamStore::new();
        layer.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { classes, task, params, layer })
    }

    pub fn forward<'a>(&self, ctx: &Ctx<'a, '_>, features: Var<'a>) -> Result<Var<'a>> {
        self.layer.forward(ctx, features)
    }

    /// Logits for clips, encoder in inference mode.
    pub fn logits(&self, encoder: &BiEncoderModel, mels: &[&MelSpectrogram]) -> Result<Tensor> {
        let feats = encoder.embed_audio(mels)?;
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params, Mode::Eval);
        let out = self.forward(&ctx, tape.constant(feats))?.value();
        Ok(out.as_ref().clone())
    }

    fn loss<'a>(&self, logits: Var<'a>, labels: &[&[usize]]) -> Var<'a> {
        match self.task {
            TaskKind::SingleLabel => logits.cross_entropy(&labels.iter().map(|l| Some(l[0])).collect::<Vec<_>>()),
            TaskKind::MultiLabel => {
                let mut t = Tensor::zeros(&[labels.len(), self.classes]);
                for (i, ls) in labels.iter().enumerate() {
                    for &c in ls.iter() {
                        t.data_mut()[i * self.classes + c] = 1.0;
                    }
                }
                logits.bce_with_logits(&t)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierOutcome {
    pub classifier: Classifier,
    /// Per-step training loss.
    pub losses: Vec<f64>,
    pub encoder_before: String,
    pub encoder_after: String,
}

fn check_labels(data: &[LabeledClip], classes: usize, task: TaskKind) -> Result<()> {
    for (i, d) in data.iter().enumerate() {
        if let Some(&bad) = d.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("item {i}: label {bad} outside {classes} classes")));
        }
        if task == TaskKind::SingleLabel && d.labels.len() != 1 {
            return Err(Error::Data(format!("item {i}: single-label task but {} labels", d.labels.len())));
        }
    }
    Ok(())
}

/// Trains a classification head on `encoder`'s audio embeddings. In probe
/// mode the encoder is checked to be bitwise unchanged afterwards.
pub fn train_classifier(encoder: &mut BiEncoderModel, classes: usize, data: &[LabeledClip], cfg: &ClassifierConfig) -> Result<ClassifierOutcome> {
    if data.is_empty() || cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("classifier training needs data, epochs and a batch size".into()));
    }
    check_labels(data, classes, cfg.task)?;
    let before = encoder.params.fingerprint("");
    let mut clf = Classifier::new(encoder.cfg.embed_dim, classes, cfg.task, cfg.seed)?;
    let mut losses = Vec::new();
    match cfg.mode {
        HeadMode::LinearProbe => {
            let mels: Vec<&MelSpectrogram> = data.iter().map(|d| d.mel.as_ref()).collect();
            let feats = encoder.embed_audio(&mels)?;
            let mut opt = OptimizerState::new(AdamConfig::default());
            for epoch in 0..cfg.epochs {
                let mut order: Vec<usize> = (0..data.len()).collect();
                order.shuffle(&mut rng_for(cfg.seed, "probe", epoch as u64));
                for idx in order.chunks(cfg.batch_size) {
                    let rows: Vec<f64> = idx.iter().flat_map(|&i| feats.row(i).to_vec()).collect();
                    let labels: Vec<&[usize]> = idx.iter().map(|&i| data[i].labels.as_slice()).collect();
                    let tape = Tape::new();
                    let ctx = Ctx::new(&tape, &clf.params, Mode::Train);
                    let x = tape.constant(Tensor::matrix(idx.len(), feats.cols(), rows)?);
                    let loss = clf.loss(clf.forward(&ctx, x)?, &labels);
                    losses.push(loss.item());
                    let grads = tape.backward(loss)?;
                    let rec = ctx.finish();
                    clf.params.accumulate(&rec, grads);
                    adam_step(&mut clf.params, &mut opt, cfg.lr)?;
                    clf.params.zero_grad();
                }
            }
        }
        HeadMode::FineTune => {
            let mut store = encoder.params.clone();
            store.set_frozen("text.", true);
            store.set_frozen(LOG_TEMPERATURE, true);
            for p in clf.params.iter() {
                store.add(p.name.clone(), p.value.clone(), p.kind)?;
            }
            let mut opt = OptimizerState::new(AdamConfig::default());
            for epoch in 0..cfg.epochs {
                let mut order: Vec<usize> = (0..data.len()).collect();
                order.shuffle(&mut rng_for(cfg.seed, "finetune-classifier", epoch as u64));
                for idx in order.chunks(cfg.batch_size) {
                    let mels: Vec<&MelSpectrogram> = idx.iter().map(|&i| data[i].mel.as_ref()).collect();
                    let labels: Vec<&[usize]> = idx.iter().map(|&i| data[i].labels.as_slice()).collect();
                    let tape = Tape::new();
                    let ctx = Ctx::new(&tape, &store, Mode::Train);
                    let feats = encoder.audio.forward(&ctx, &mels)?;
                    let loss = clf.loss(clf.forward(&ctx, feats)?, &labels);
                    losses.push(loss.item());
                    let grads = tape.backward(loss)?;
                    let mut rec = ctx.finish();
                    store.accumulate(&rec, grads);
                    store.commit_stats(&mut rec);
                    adam_step(&mut store, &mut opt, cfg.lr)?;
                    store.zero_grad();
                }
            }
            let names: Vec<String> = encoder.params.iter().map(|p| p.name.clone()).collect();
            for n in names {
                encoder.params.set_value(&n, store.value(&n)?.clone())?;
            }
            let head: Vec<String> = clf.params.iter().map(|p| p.name.clone()).collect();
            for n in head {
                clf.params.set_value(&n, store.value(&n)?.clone())?;
            }
        }
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("classifier loss became non-finite".into()));
    }
    let after = encoder.params.fingerprint("");
    if cfg.mode == HeadMode::LinearProbe && after != before {
        return Err(Error::Evaluation("linear probe modified the encoder".into()));
    }
    Ok(ClassifierOutcome { classifier: clf, losses, encoder_before: before, encoder_after: after })
}

/// Accuracy (single-label) or mAP (multi-label) of a trained head.
pub fn evaluate_classifier(encoder: &BiEncoderModel, clf: &Classifier, data: &[LabeledClip]) -> Result<f64> {
    check_labels(data, clf.classes, clf.task)?;
    let mels: Vec<&MelSpectrogram> = data.iter().map(|d| d.mel.as_ref()).collect();
    let logits = clf.logits(encoder, &mels)?;
    match clf.task {
        TaskKind::SingleLabel => {
            let preds: Vec<usize> = (0..logits.rows()).map(|i| argmax(logits.row(i))).collect();
            accuracy(&preds, &data.iter().map(|d| d.labels[0]).collect::<Vec<_>>())
        }
        TaskKind::MultiLabel => {
            let mut t = Tensor::zeros(&[data.len(), clf.classes]);
            for (i, d) in data.iter().enumerate() {
                for &c in &d.labels {
                    t.data_mut()[i * clf.classes + c] = 1.0;
                }
            }
            Ok(mean_average_precision(&logits, &t)?.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{event_mel, event_vocab, tiny_biencoder_cfg, EVENTS};

    struct OneHot;

    impl BiEncoder for OneHot {
        fn embed_audio(&self, mels: &[&MelSpectrogram]) -> Result<Tensor> {
            let mut t = Tensor::zeros(&[mels.len(), 3]);
            for (i, m) in mels.iter().enumerate() {
                t.data_mut()[i * 3 + m.n_frames % 3] = 1.0;
            }
            Ok(t)
        }

        fn embed_text(&self, texts: &[String]) -> Result<Tensor> {
            let mut t = Tensor::zeros(&[texts.len(), 3]);
            for (i, s) in texts.iter().enumerate() {
                let k = ["zero", "one", "two"].iter().position(|w| s == w).unwrap_or(0);
                t.data_mut()[i * 3 + k] = 1.0;
            }
            Ok(t)
        }
    }

    fn mel(frames: usize) -> MelSpectrogram {
        MelSpectrogram { frames: vec![0.0; frames * 2], n_frames: frames, mel_bins: 2, frame_rate: 1.0, config_fingerprint: [0; 32] }
    }

    #[test]
    fn zero_shot_with_one_hot_stub() {
        let mels: Vec<MelSpectrogram> = (0..6).map(mel).collect();
        let refs: Vec<&MelSpectrogram> = mels.iter().collect();
        let labels: Vec<String> = ["zero", "one", "two", "two"].iter().map(|s| s.to_string()).collect();
        let zs = zero_shot_classify(&OneHot, &refs, &labels).unwrap();
        assert_eq!(zs.predictions, vec![0, 1, 2, 0, 1, 2]);
        for i in 0..6 {
            assert_eq!(zs.scores.at(i, 2), zs.scores.at(i, 3));
        }
        assert_eq!(accuracy(&zs.predictions, &[0, 1, 2, 0, 1, 2]).unwrap(), 1.0);
        assert!(zero_shot_classify(&OneHot, &refs, &[]).is_err());
    }

    fn clips(model: &BiEncoderModel, per: usize) -> Vec<LabeledClip> {
        (0..per * 4).map(|i| LabeledClip { mel: Arc::new(event_mel(model, EVENTS[i % 4], 100 + i as u64)), labels: vec![i % 4] }).collect()
    }

    #[test]
    fn probe_leaves_encoder_untouched() {
        let mut enc = BiEncoderModel::new(&tiny_biencoder_cfg(), event_vocab(), 3).unwrap();
        let data = clips(&enc, 4);
        let cfg = ClassifierConfig { mode: HeadMode::LinearProbe, task: TaskKind::SingleLabel, epochs: 300, batch_size: 16, lr: 3e-2, seed: 1 };
        let out = train_classifier(&mut enc, 4, &data, &cfg).unwrap();
        assert_eq!(out.encoder_before, out.encoder_after);
        assert_eq!(out.losses.len(), 300);
        assert!(out.losses[299] < out.losses[0]);
        let bad = vec![LabeledClip { mel: data[0].mel.clone(), labels: vec![4] }];
        assert!(matches!(train_classifier(&mut enc, 4, &bad, &cfg), Err(Error::Data(_))));
    }

    #[test]
    fn fine_tune_overfits_a_batch() {
        let mut enc = BiEncoderModel::new(&tiny_biencoder_cfg(), event_vocab(), 4).unwrap();
        let data = clips(&enc, 4);
        let cfg = ClassifierConfig { mode: HeadMode::FineTune, task: TaskKind::SingleLabel, epochs: 300, batch_size: 16, lr: 3e-3, seed: 2 };
        let out = train_classifier(&mut enc, 4, &data, &cfg).unwrap();
        assert_ne!(out.encoder_before, out.encoder_after);
        assert_eq!(evaluate_classifier(&enc, &out.classifier, &data).unwrap(), 1.0);
    }

    #[test]
    fn bce_of_zero_logits_is_ln2() {
        let clf = Classifier::new(2, 3, TaskKind::MultiLabel, 0).unwrap();
        let tape = Tape::new();
        let loss = clf.loss(tape.constant(Tensor::zeros(&[2, 3])), &[&[], &[]]);
        assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
