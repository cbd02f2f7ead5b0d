use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::kappa::{linear_kappa, qwk, KappaInput};
use super::split::{split_indices, SplitPlan};
use crate::corpus::{Corpus, Document};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::pipeline::{fit_predict, Method, PipelineConfig};

/// Anything that can be trained on one split and score the other.
pub trait Scorer: Sync {
    fn label(&self) -> String;

    /// Predicted scores for `test`, in order.
    fn fit_predict(
        &self,
        train: &[Document],
        test: &[Document],
        num_levels: u8,
        seed: u64,
    ) -> Result<Vec<u8>>;
}

/// One of the built-in methods over a fixed embedding table.
pub struct PipelineScorer<'a> {
    pub method: Method,
    pub table: &'a EmbeddingTable,
    pub config: &'a PipelineConfig,
}

impl Scorer for PipelineScorer<'_> {
    fn label(&self) -> String {
        self.method.to_string()
    }

    fn fit_predict(
        &self,
        train: &[Document],
        test: &[Document],
        num_levels: u8,
        seed: u64,
    ) -> Result<Vec<u8>> {
        fit_predict(
            self.method,
            self.table,
            train,
            test,
            num_levels,
            &self.config.reseeded(seed),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub id: String,
    pub gold: u8,
    pub predicted: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatOutcome {
    pub repeat: usize,
    /// Seed handed to the scorer for this repeat.
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    /// Score levels with no training document in this split.
    pub missing_train_levels: Vec<u8>,
    pub qwk: Option<f64>,
    pub linear_kappa: Option<f64>,
    /// Why the repeat failed or its kappa is undefined.
    pub error: Option<String>,
    pub predictions: Vec<ScoredDoc>,
}

impl RepeatOutcome {
    pub fn failed(&self) -> bool {
        self.qwk.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Summary {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    /// Hash of method, plan, configuration and corpus contents.
    pub run_id: String,
    pub method: String,
    pub num_documents: usize,
    pub num_levels: u8,
    pub plan: SplitPlan,
    pub config: serde_json::Value,
    pub repeats: Vec<RepeatOutcome>,
    pub completed_repeats: usize,
    pub failed_repeats: Vec<usize>,
    pub qwk: Option<Summary>,
    pub linear_kappa: Option<Summary>,
    /// QWK over the concatenated test predictions of completed repeats.
    pub pooled_qwk: Option<f64>,
    /// Wall-clock time of the run; not part of the reproducible content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl ProtocolReport {
    /// Per-document gold and predicted scores across completed repeats.
    pub fn prediction_log(&self) -> Vec<(usize, &ScoredDoc)> {
        self.repeats
            .iter()
            .filter(|r| !r.failed())
            .flat_map(|r| r.predictions.iter().map(move |p| (r.repeat, p)))
            .collect()
    }
}

fn run_id(corpus: &Corpus, label: &str, plan: &SplitPlan, config: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update(serde_json::to_vec(plan).expect("plan serializes"));
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(corpus.provenance.preprocess_fingerprint.as_bytes());
    for d in &corpus.documents {
        h.update(d.id.as_bytes());
        h.update([0, d.score]);
        h.update(d.tokens.join(" ").as_bytes());
        h.update([0]);
    }
    hex::encode(&h.finalize()[..8])
}

fn run_repeat(
    corpus: &Corpus,
    scorer: &dyn Scorer,
    plan: &SplitPlan,
    repeat: usize,
) -> RepeatOutcome {
    let mut rng = plan.repeat_rng(repeat);
    let scores: Vec<u8> = corpus.documents.iter().map(|d| d.score).collect();
    let mut outcome = RepeatOutcome {
        repeat,
        seed: 0,
        train_size: 0,
        test_size: 0,
        missing_train_levels: Vec::new(),
        qwk: None,
        linear_kappa: None,
        error: None,
        predictions: Vec::new(),
    };
    let split = match split_indices(&scores, plan.train_fraction, plan.stratified, &mut rng) {
        Ok(s) => s,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    outcome.seed = rng.next_u64();
    outcome.train_size = split.train.len();
    outcome.test_size = split.test.len();
    let train: Vec<Document> = split
        .train
        .iter()
        .map(|&i| corpus.documents[i].clone())
        .collect();
    let test: Vec<Document> = split
        .test
        .iter()
        .map(|&i| corpus.documents[i].clone())
        .collect();
    outcome.missing_train_levels = (1..=corpus.num_levels)
        .filter(|l| !train.iter().any(|d| d.score == *l))
        .collect();
    if !outcome.missing_train_levels.is_empty() {
        log::warn!(
            "repeat {repeat}: levels {:?} have no training documents",
            outcome.missing_train_levels
        );
    }

    let predicted = match scorer.fit_predict(&train, &test, corpus.num_levels, outcome.seed) {
        Ok(p) if p.len() == test.len() => p,
        Ok(p) => {
            outcome.error = Some(format!(
                "scorer returned {} predictions for {} documents",
                p.len(),
                test.len()
            ));
            return outcome;
        }
        Err(e) => {
            log::warn!("repeat {repeat} failed: {e}");
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    outcome.predictions = test
        .iter()
        .zip(&predicted)
        .map(|(d, &p)| ScoredDoc {
            id: d.id.clone(),
            gold: d.score,
            predicted: p,
        })
        .collect();
    let pairs = outcome
        .predictions
        .iter()
        .map(|p| (p.gold, p.predicted))
        .collect();
    match KappaInput::new(pairs, corpus.num_levels).and_then(|k| Ok((qwk(&k)?, linear_kappa(&k)?)))
    {
        Ok((q, l)) => {
            outcome.qwk = Some(q);
            outcome.linear_kappa = Some(l);
        }
        Err(e) => {
            log::warn!("repeat {repeat}: {e}");
            outcome.error = Some(e.to_string());
        }
    }
    outcome
}

/// Repeated random splits: train on each training side, score the test
/// side, and aggregate kappa over the repeats that completed.
///
/// Repeats run in parallel but each draws from its own stream, so the
/// report does not depend on scheduling.
pub fn run_protocol(
    corpus: &Corpus,
    scorer: &dyn Scorer,
    plan: &SplitPlan,
    config: &impl Serialize,
) -> Result<ProtocolReport> {
    plan.validate()?;
    let config = serde_json::to_value(config).map_err(|e| Error::Internal(e.to_string()))?;
    let label = scorer.label();
    let repeats: Vec<RepeatOutcome> = (0..plan.repeats)
        .into_par_iter()
        .map(|r| run_repeat(corpus, scorer, plan, r))
        .collect();
    let failed: Vec<usize> = repeats
        .iter()
        .filter(|r| r.failed())
        .map(|r| r.repeat)
        .collect();
    if failed.len() == repeats.len() {
        return Err(Error::Training(format!(
            "all {} repeats failed; first error: {}",
            repeats.len(),
            repeats[0].error.as_deref().unwrap_or("unknown")
        )));
    }
    if !failed.is_empty() {
        log::warn!("repeats {failed:?} failed and are excluded from the aggregates");
    }
    let qwks: Vec<f64> = repeats.iter().filter_map(|r| r.qwk).collect();
    let linear: Vec<f64> = repeats.iter().filter_map(|r| r.linear_kappa).collect();
    let pooled_pairs: Vec<(u8, u8)> = repeats
        .iter()
        .filter(|r| !r.failed())
        .flat_map(|r| r.predictions.iter().map(|p| (p.gold, p.predicted)))
        .collect();
    let pooled_qwk = KappaInput::new(pooled_pairs, corpus.num_levels)
        .and_then(|k| qwk(&k))
        .ok();
    Ok(ProtocolReport {
        run_id: run_id(corpus, &label, plan, &config),
        method: label,
        num_documents: corpus.len(),
        num_levels: corpus.num_levels,
        plan: plan.clone(),
        config,
        completed_repeats: qwks.len(),
        failed_repeats: failed,
        qwk: Summary::of(&qwks),
        linear_kappa: Summary::of(&linear),
        pooled_qwk,
        repeats,
        timestamp: None,
    })
}
