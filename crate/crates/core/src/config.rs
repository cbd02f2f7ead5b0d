//! Flat run configuration. Values come from command-line flags, then a TOML
//! file, then the defaults below.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{load_stopwords, PreprocessConfig};
use crate::embeddings::{DEFAULT_OOV_SEED, DEFAULT_SIF_A};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{SplitPlan, DEFAULT_MIN_OCCURRENCES};
use crate::ot::{
    Epsilon, SinkhornConfig, DEFAULT_EPSILON_SCALE, DEFAULT_MAX_ITERS, DEFAULT_TOLERANCE,
};
use crate::pipeline::{Method, PipelineConfig};
use crate::scoring::{BaselineConfig, BaselineHead, DEFAULT_K};
use crate::training::{TrainConfig, DEFAULT_MARGIN};

/// Environment variable naming a config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "COREL_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonMode {
    Absolute,
    MeanScaled,
    MaxScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // preprocessing
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub remove_stopwords: bool,
    pub stem: bool,
    pub stopwords_path: Option<PathBuf>,
    pub max_tokens: Option<usize>,
    /// Inferred from the largest score when unset.
    pub num_levels: Option<u8>,

    // word vectors
    pub embeddings_path: Option<PathBuf>,
    pub embedding_dim: usize,
    pub oov_seed: u64,
    pub sif_a: f64,

    // encoder
    pub method: Method,
    pub d_h: usize,
    pub d_c: usize,
    pub half_window: usize,
    pub batch_norm: bool,
    pub squashed_cell: bool,

    // transport
    pub epsilon_mode: EpsilonMode,
    pub epsilon: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tolerance: f64,

    // training
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub triplets_per_anchor: usize,
    pub resample_each_epoch: bool,
    pub clip_grad_norm: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    // scoring
    pub k: usize,
    pub baseline_head: BaselineHead,
    pub baseline_epochs: usize,
    pub baseline_learning_rate: f64,
    pub baseline_batch_size: usize,

    // evaluation
    pub repeats: usize,
    pub train_fraction: f64,
    pub stratified: bool,
    pub min_occurrences: usize,

    pub seed: u64,
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let enc = EncoderConfig::default();
        let baseline = BaselineConfig::default();
        let plan = SplitPlan::default();
        RunConfig {
            lowercase: true,
            strip_punctuation: true,
            remove_stopwords: true,
            stem: true,
            stopwords_path: None,
            max_tokens: None,
            num_levels: None,
            embeddings_path: None,
            embedding_dim: enc.d_w,
            oov_seed: DEFAULT_OOV_SEED,
            sif_a: DEFAULT_SIF_A,
            method: Method::CorelCnn,
            d_h: enc.d_h,
            d_c: enc.d_c,
            half_window: enc.half_window,
            batch_norm: enc.batch_norm,
            squashed_cell: enc.squashed_cell,
            epsilon_mode: EpsilonMode::MeanScaled,
            epsilon: DEFAULT_EPSILON_SCALE,
            sinkhorn_max_iters: DEFAULT_MAX_ITERS,
            sinkhorn_tolerance: DEFAULT_TOLERANCE,
            margin: DEFAULT_MARGIN,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            triplets_per_anchor: train.triplets_per_anchor,
            resample_each_epoch: train.resample_each_epoch,
            clip_grad_norm: train.clip_grad_norm,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            adam_eps: train.adam_eps,
            k: DEFAULT_K,
            baseline_head: baseline.head,
            baseline_epochs: baseline.epochs,
            baseline_learning_rate: baseline.learning_rate,
            baseline_batch_size: baseline.batch_size,
            repeats: plan.repeats,
            train_fraction: plan.train_fraction,
            stratified: plan.stratified,
            min_occurrences: DEFAULT_MIN_OCCURRENCES,
            seed: 0,
            threads: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess_config()?.validate()?;
        let p = self.pipeline_config();
        p.encoder.validate()?;
        p.sinkhorn.validate()?;
        p.train.validate()?;
        self.split_plan().validate()?;
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        if self.sif_a.is_nan() || self.sif_a <= 0.0 {
            return Err(Error::Config("sif_a must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn preprocess_config(&self) -> Result<PreprocessConfig> {
        let mut cfg = PreprocessConfig {
            lowercase: self.lowercase,
            strip_punctuation: self.strip_punctuation,
            remove_stopwords: self.remove_stopwords,
            stem: self.stem,
            max_tokens: self.max_tokens,
            ..PreprocessConfig::default()
        };
        if let Some(path) = &self.stopwords_path {
            cfg.stopwords = load_stopwords(path)?;
        }
        Ok(cfg)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            encoder: EncoderConfig {
                kind: self.method.encoder_kind(),
                d_w: self.embedding_dim,
                d_h: self.d_h,
                d_c: self.d_c,
                half_window: self.half_window,
                batch_norm: self.batch_norm,
                squashed_cell: self.squashed_cell,
                init_seed: self.seed,
            },
            sinkhorn: SinkhornConfig {
                epsilon: match self.epsilon_mode {
                    EpsilonMode::Absolute => Epsilon::Absolute(self.epsilon),
                    EpsilonMode::MeanScaled => Epsilon::MeanScaled(self.epsilon),
                    EpsilonMode::MaxScaled => Epsilon::MaxScaled(self.epsilon),
                },
                max_iters: self.sinkhorn_max_iters,
                tolerance: self.sinkhorn_tolerance,
            },
            train: TrainConfig {
                margin: self.margin,
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                epochs: self.epochs,
                triplets_per_anchor: self.triplets_per_anchor,
                seed: self.seed,
                adam_beta1: self.adam_beta1,
                adam_beta2: self.adam_beta2,
                adam_eps: self.adam_eps,
                resample_each_epoch: self.resample_each_epoch,
                clip_grad_norm: self.clip_grad_norm,
            },
            k: self.k,
            sif_a: self.sif_a,
            baseline: BaselineConfig {
                head: self.baseline_head,
                epochs: self.baseline_epochs,
                learning_rate: self.baseline_learning_rate,
                batch_size: self.baseline_batch_size,
                seed: self.seed,
            },
        }
    }

    pub fn split_plan(&self) -> SplitPlan {
        SplitPlan {
            repeats: self.repeats,
            train_fraction: self.train_fraction,
            stratified: self.stratified,
            seed: self.seed,
        }
    }
}
