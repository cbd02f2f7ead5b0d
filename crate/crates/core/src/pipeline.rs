//! End-to-end fitting and prediction for each scoring method.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embeddings::{compute_sif, embed_all, EmbeddingTable, SifWeights, DEFAULT_SIF_A};
use crate::encoders::{EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::ot::SinkhornConfig;
use crate::scoring::{
    baseline_mean_pool_predict, build_knn, BaselineConfig, KnnModel, Prediction, DEFAULT_K,
};
use crate::training::{train, AdamState, TrainConfig, TrainReport};

/// A scoring system: the contrastive encoders with Wasserstein KNN, or a
/// mean-pooled recurrent baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    CorelCnn,
    CorelLstm,
    CorelBilstm,
    BaselineLstm,
    BaselineBilstm,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::CorelCnn,
        Method::CorelLstm,
        Method::CorelBilstm,
        Method::BaselineLstm,
        Method::BaselineBilstm,
    ];

    pub fn encoder_kind(self) -> EncoderKind {
        match self {
            Method::CorelCnn => EncoderKind::Cnn,
            Method::CorelLstm | Method::BaselineLstm => EncoderKind::Lstm,
            Method::CorelBilstm | Method::BaselineBilstm => EncoderKind::Bilstm,
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Method::BaselineLstm | Method::BaselineBilstm)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CorelCnn => "corel-cnn",
            Method::CorelLstm => "corel-lstm",
            Method::CorelBilstm => "corel-bilstm",
            Method::BaselineLstm => "baseline-lstm",
            Method::BaselineBilstm => "baseline-bilstm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Everything downstream of preprocessing and embedding lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub sinkhorn: SinkhornConfig,
    pub train: TrainConfig,
    pub k: usize,
    pub sif_a: f64,
    pub baseline: BaselineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            encoder: EncoderConfig::default(),
            sinkhorn: SinkhornConfig::default(),
            train: TrainConfig::default(),
            k: DEFAULT_K,
            sif_a: DEFAULT_SIF_A,
            baseline: BaselineConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Encoder settings for `kind` with the word dimension of `table`.
    pub fn encoder_for(&self, kind: EncoderKind, table: &EmbeddingTable) -> EncoderConfig {
        EncoderConfig {
            kind,
            d_w: table.dim(),
            ..self.encoder.clone()
        }
    }

    /// The same configuration with every seed replaced by `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.encoder.init_seed = seed;
        c.train.seed = seed;
        c.baseline.seed = seed;
        c
    }
}

/// A trained contrastive encoder with its reference set.
pub struct FittedModel {
    pub knn: KnnModel,
    pub sif: SifWeights,
    pub report: TrainReport,
    pub optimizer: AdamState,
}

impl FittedModel {
    pub fn predict(&self, table: &EmbeddingTable, docs: &[Document]) -> Result<Vec<Prediction>> {
        let embedded = embed_all(docs, table, &self.sif)?;
        self.knn.predict_all(&embedded)
    }
}

/// Fit SIF weights on `train`, train the encoder, and index the training set.
pub fn fit_corel(
    table: &EmbeddingTable,
    train_docs: &[Document],
    num_levels: u8,
    kind: EncoderKind,
    cfg: &PipelineConfig,
) -> Result<FittedModel> {
    let sif = compute_sif(train_docs, cfg.sif_a)?;
    let embedded = embed_all(train_docs, table, &sif)?;
    let enc_cfg = cfg.encoder_for(kind, table);
    let (encoder, report, optimizer) =
        train(&embedded, num_levels, &enc_cfg, &cfg.sinkhorn, &cfg.train)?;
    let knn = build_knn(&embedded, encoder, cfg.k, num_levels, cfg.sinkhorn)?;
    Ok(FittedModel {
        knn,
        sif,
        report,
        optimizer,
    })
}

/// Train on `train_docs` with `method` and return predicted scores for `test_docs`.
pub fn fit_predict(
    method: Method,
    table: &EmbeddingTable,
    train_docs: &[Document],
    test_docs: &[Document],
    num_levels: u8,
    cfg: &PipelineConfig,
) -> Result<Vec<u8>> {
    if method.is_baseline() {
        let sif = compute_sif(train_docs, cfg.sif_a)?;
        let train_emb = embed_all(train_docs, table, &sif)?;
        let test_emb = embed_all(test_docs, table, &sif)?;
        let enc_cfg = cfg.encoder_for(method.encoder_kind(), table);
        let preds =
            baseline_mean_pool_predict(&train_emb, &test_emb, &enc_cfg, num_levels, &cfg.baseline)?;
        Ok(preds.into_iter().map(|p| p.predicted_score).collect())
    } else {
        let model = fit_corel(table, train_docs, num_levels, method.encoder_kind(), cfg)?;
        Ok(model
            .predict(table, test_docs)?
            .into_iter()
            .map(|p| p.predicted_score)
            .collect())
    }
}
