use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::audiofront::FrontendConfig;
use crate::bootstrap::FilterMode;
use crate::captioner::{CaptionModelConfig, CaptionTrainConfig};
use crate::contrastive::{Selection, TrainConfig};
use crate::encoders::{AudioEncoderConfig, BiEncoderConfig, TextEncoderConfig};
use crate::error::{Error, Result};
use crate::evalsuite::{ClassifierConfig, FinetuneConfig, HeadMode, TaskKind};
use crate::toygen::{ClassificationConfig, CorpusConfig, SceneConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Minutes-scale settings used by the tests.
    Desk,
    /// Large-scale hyperparameters; documents the reference recipe and is
    /// not expected to finish on a laptop.
    Full,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub filter: FilterMode,
    pub beam_size: usize,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionerSection {
    pub model: CaptionModelConfig,
    pub train: CaptionTrainConfig,
    /// Also train the copy without tag input.
    pub ablation: bool,
    /// Beam width for evaluation captions.
    pub beam_size: usize,
    /// Template references drawn per test clip for caption metrics.
    pub references: usize,
    /// Template captions per rendered training clip: the corpus caption
    /// plus alternates drawn from the clip's scene.
    pub captions_per_clip: usize,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub main: CorpusConfig,
    /// A second captioned corpus used as the retrieval fine-tuning target.
    pub downstream: CorpusConfig,
    pub classification: ClassificationConfig,
    pub vocab_min_count: usize,
}

/// Optional input overrides. Unset paths resolve to the standard locations
/// inside the run directory.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub caption_manifest: Option<PathBuf>,
    pub tag_only_manifest: Option<PathBuf>,
    pub synthetic_manifest: Option<PathBuf>,
    pub downstream_manifest: Option<PathBuf>,
    pub classification_manifest: Option<PathBuf>,
    pub captioner_checkpoint: Option<PathBuf>,
    pub biencoder_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub seed: u64,
    pub corpus: CorpusSection,
    pub captioner: CaptionerSection,
    pub bootstrap: BootstrapConfig,
    pub biencoder: BiEncoderConfig,
    pub pretrain: PretrainSection,
    pub finetune_retrieval: FinetuneConfig,
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub paths: PathsSection,
}

impl PipelineConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => desk(),
            Profile::Full => full(),
        }
    }

    /// Re-seeds every stage from the top-level seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.captioner.train.seed = seed;
        self.pretrain.stage1.seed = seed;
        self.pretrain.stage2.seed = seed;
        self.finetune_retrieval.seed = seed;
        self.classifier.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fe = &self.biencoder.frontend;
        fe.validate(self.biencoder.sample_rate)?;
        self.captioner.model.frontend.validate(self.captioner.model.sample_rate)?;
        self.captioner.train.validate()?;
        self.pretrain.stage1.validate()?;
        self.pretrain.stage2.validate()?;
        for (name, sr) in [
            ("corpus.main.scene.sample_rate", self.corpus.main.scene.sample_rate),
            ("corpus.downstream.scene.sample_rate", self.corpus.downstream.scene.sample_rate),
            ("corpus.classification.scene.sample_rate", self.corpus.classification.scene.sample_rate),
            ("captioner.model.sample_rate", self.captioner.model.sample_rate),
        ] {
            if sr != self.biencoder.sample_rate {
                return Err(Error::Config(format!("{name} is {sr} but biencoder.sample_rate is {}", self.biencoder.sample_rate)));
            }
        }
        if self.bootstrap.beam_size == 0 || self.captioner.beam_size == 0 {
            return Err(Error::Config("beam sizes must be positive".into()));
        }
        if self.captioner.references < 2 {
            return Err(Error::Config("captioner.references must be at least 2".into()));
        }
        Ok(())
    }
}

fn desk_frontend() -> FrontendConfig {
    FrontendConfig { win: 2048, hop: 1280, n_fft: 2048, mel_bins: 32, fmin: 50.0, fmax: 8000.0, floor_eps: 1e-10 }
}

fn desk() -> PipelineConfig {
    let scene = SceneConfig::default();
    let frontend = desk_frontend();
    PipelineConfig {
        profile: Profile::Desk,
        seed: 0,
        corpus: CorpusSection {
            main: CorpusConfig { n_train: 300, n_val: 100, n_test: 100, n_tag_only: 2000, ..CorpusConfig::default() },
            downstream: CorpusConfig { n_train: 300, n_val: 100, n_test: 100, n_tag_only: 0, ..CorpusConfig::default() },
            classification: ClassificationConfig { per_class_train: 20, per_class_test: 20, scene },
            vocab_min_count: 1,
        },
        captioner: CaptionerSection {
            model: CaptionModelConfig {
                frontend: frontend.clone(),
                frame_pool: 1,
                gru_hidden: 32,
                gru_layers: 1,
                width: 96,
                heads: 2,
                ff_hidden: 192,
                decoder_layers: 3,
                max_len: 20,
                ..CaptionModelConfig::default()
            },
            train: CaptionTrainConfig { epochs: 5, batch_size: 32, max_lr: 3e-3, final_lr: 1e-4, warmup_iters: None, seed: 0 },
            ablation: true,
            beam_size: 3,
            references: 5,
            captions_per_clip: 20,
        },
        bootstrap: BootstrapConfig { filter: FilterMode::Strict, beam_size: 1 },
        biencoder: BiEncoderConfig {
            frontend,
            audio: AudioEncoderConfig { channels: vec![8, 16, 32], pool_every: 1 },
            text: TextEncoderConfig { width: 32, layers: 1, heads: 2, ff_hidden: 64, max_tokens: 24 },
            embed_dim: 64,
            ..BiEncoderConfig::default()
        },
        pretrain: PretrainSection {
            stage1: TrainConfig { batch_size: 32, total_iters: 600, warmup_iters: 30, max_lr: 2e-3, validate_every: 100, seed: 0, selection: Selection::MeanRecall },
            stage2: TrainConfig { batch_size: 32, total_iters: 200, warmup_iters: 10, max_lr: 1e-3, validate_every: 50, seed: 0, selection: Selection::MeanRecall },
        },
        finetune_retrieval: FinetuneConfig { epochs: 30, batch_size: 32, max_lr: 1e-3, validate_every: Some(9), seed: 0 },
        classifier: ClassifierConfig { mode: HeadMode::LinearProbe, task: TaskKind::SingleLabel, epochs: 100, batch_size: 32, lr: 1e-2, seed: 0 },
        paths: PathsSection::default(),
    }
}

fn full() -> PipelineConfig {
    let frontend = FrontendConfig::default();
    PipelineConfig {
        profile: Profile::Full,
        seed: 0,
        corpus: CorpusSection {
            main: CorpusConfig { n_train: 40_000, n_val: 2_500, n_test: 5_000, n_tag_only: 1_000_000, ..CorpusConfig::default() },
            downstream: CorpusConfig { n_train: 20_000, n_val: 2_500, n_test: 5_000, n_tag_only: 0, ..CorpusConfig::default() },
            classification: ClassificationConfig { per_class_train: 1_000, per_class_test: 200, scene: SceneConfig::default() },
            vocab_min_count: 1,
        },
        captioner: CaptionerSection {
            model: CaptionModelConfig { frontend: frontend.clone(), ..CaptionModelConfig::default() },
            train: CaptionTrainConfig::default(),
            ablation: true,
            beam_size: 3,
            references: 5,
            captions_per_clip: 1,
        },
        bootstrap: BootstrapConfig { filter: FilterMode::Strict, beam_size: 3 },
        biencoder: BiEncoderConfig { frontend, ..BiEncoderConfig::default() },
        pretrain: PretrainSection { stage1: TrainConfig::full_stage1(), stage2: TrainConfig::full_stage2() },
        finetune_retrieval: FinetuneConfig::default(),
        classifier: ClassifierConfig { mode: HeadMode::LinearProbe, task: TaskKind::SingleLabel, epochs: 30, batch_size: 64, lr: 1e-3, seed: 0 },
        paths: PathsSection::default(),
    }
}

/// Recursively overlays `patch` onto `base`. Objects merge key by key;
/// anything else replaces.
pub fn deep_merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Profile defaults overlaid with `overrides`. Unknown keys and type
/// mismatches are errors that name the JSON path. Stage seeds always
/// follow the top-level `seed`.
pub fn resolve(profile: Profile, overrides: Value) -> Result<PipelineConfig> {
    if !overrides.is_object() {
        return Err(Error::Config("config root must be a JSON object".into()));
    }
    let chosen = match overrides.get("profile") {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("profile: {e}")))?,
        None => profile,
    };
    let mut tree = serde_json::to_value(PipelineConfig::profile(chosen))?;
    deep_merge(&mut tree, overrides);
    let cfg: PipelineConfig = serde_path_to_error::deserialize(tree).map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))?;
    cfg.validate()?;
    let seed = cfg.seed;
    Ok(cfg.with_seed(seed))
}

/// Reads a JSON config file (or none) on top of a profile, then applies a
/// command-line seed.
pub fn load_config(path: Option<&Path>, profile: Profile, seed: Option<u64>) -> Result<PipelineConfig> {
    let overrides = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    let cfg = resolve(profile, overrides)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn empty_object_gives_profile_defaults() {
        assert_eq!(resolve(Profile::Desk, json!({})).unwrap(), PipelineConfig::profile(Profile::Desk));
        let full = resolve(Profile::Full, json!({})).unwrap();
        assert_eq!(full.pretrain.stage1.total_iters, 200_000);
        assert_eq!(full.finetune_retrieval.batch_size, 128);
        assert_eq!(resolve(Profile::Desk, json!({"profile": "full"})).unwrap(), full);
    }

    #[test]
    fn overrides_merge_deeply() {
        let cfg = resolve(Profile::Desk, json!({"pretrain": {"stage1": {"batch_size": 16}}, "seed": 4})).unwrap();
        assert_eq!(cfg.pretrain.stage1.batch_size, 16);
        assert_eq!(cfg.pretrain.stage1.total_iters, 600);
        assert_eq!((cfg.seed, cfg.pretrain.stage2.seed, cfg.classifier.seed), (4, 4, 4));
    }

    #[test]
    fn bad_keys_and_values_name_the_path() {
        let err = resolve(Profile::Desk, json!({"pretrain": {"stage1": {"batch_sise": 16}}})).unwrap_err().to_string();
        assert!(err.contains("pretrain.stage1"), "{err}");
        let err = resolve(Profile::Desk, json!({"pretrain": {"stage2": {"total_iters": -5}}})).unwrap_err().to_string();
        assert!(err.contains("pretrain.stage2.total_iters"), "{err}");
        let err = resolve(Profile::Desk, json!({"captioner": {"train": {"epochs": "many"}}})).unwrap_err().to_string();
        assert!(err.contains("captioner.train.epochs"), "{err}");
    }

    #[test]
    fn merge_replaces_scalars_and_arrays() {
        let mut a = json!({"x": {"y": 1, "z": [1, 2]}, "k": 0});
        deep_merge(&mut a, json!({"x": {"z": [3]}, "n": true}));
        assert_eq!(a, json!({"x": {"y": 1, "z": [3]}, "k": 0, "n": true}));
    }
}
