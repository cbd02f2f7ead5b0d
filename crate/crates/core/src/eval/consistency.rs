use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_OCCURRENCES: usize = 2;

/// Declaration order is the listing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsistencyClass {
    ConsistentlyMatches,
    ConsistentlyDiffers,
    Mixed,
    NeverTested,
}

impl ConsistencyClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ConsistencyClass::ConsistentlyMatches => "consistently-matches",
            ConsistencyClass::ConsistentlyDiffers => "consistently-differs",
            ConsistencyClass::Mixed => "mixed",
            ConsistencyClass::NeverTested => "never-tested",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub id: String,
    pub gold: u8,
    /// One entry per repeat in which the document was tested, in repeat order.
    pub predictions: Vec<u8>,
    /// Most frequent prediction, smallest on ties.
    pub modal_prediction: Option<u8>,
    pub class: ConsistencyClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub min_occurrences: usize,
    /// Sorted by class, then id.
    pub rows: Vec<ConsistencyRow>,
}

/// A single test-time prediction from some repeat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedPrediction<'a> {
    pub repeat: usize,
    pub id: &'a str,
    pub predicted: u8,
}

pub fn classify(gold: u8, predictions: &[u8], min_occurrences: usize) -> ConsistencyClass {
    if predictions.is_empty() {
        ConsistencyClass::NeverTested
    } else if predictions.len() < min_occurrences {
        ConsistencyClass::Mixed
    } else if predictions.iter().all(|&p| p == gold) {
        ConsistencyClass::ConsistentlyMatches
    } else if predictions.iter().all(|&p| p != gold) {
        ConsistencyClass::ConsistentlyDiffers
    } else {
        ConsistencyClass::Mixed
    }
}

pub fn modal(predictions: &[u8]) -> Option<u8> {
    let mut counts = BTreeMap::new();
    for &p in predictions {
        *counts.entry(p).or_insert(0usize) += 1;
    }
    // max_by_key keeps the last maximum, so iterate descending to prefer the smallest level
    counts
        .into_iter()
        .rev()
        .max_by_key(|&(_, c)| c)
        .map(|(p, _)| p)
}

/// Classify every document in `documents` (id, gold) from the prediction log.
/// Predictions for unknown ids are ignored.
pub fn consistency_report<'a>(
    documents: &[(String, u8)],
    log: impl IntoIterator<Item = LoggedPrediction<'a>>,
    min_occurrences: usize,
) -> ConsistencyReport {
    let mut per_doc: BTreeMap<&str, Vec<(usize, u8)>> = documents
        .iter()
        .map(|(id, _)| (id.as_str(), Vec::new()))
        .collect();
    for p in log {
        if let Some(v) = per_doc.get_mut(p.id) {
            v.push((p.repeat, p.predicted));
        }
    }
    let mut rows: Vec<ConsistencyRow> = documents
        .iter()
        .map(|(id, gold)| {
            let mut entries = per_doc[id.as_str()].clone();
            entries.sort_by_key(|&(r, _)| r);
            let predictions: Vec<u8> = entries.into_iter().map(|(_, p)| p).collect();
            ConsistencyRow {
                id: id.clone(),
                gold: *gold,
                modal_prediction: modal(&predictions),
                class: classify(*gold, &predictions, min_occurrences),
                predictions,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.class.cmp(&b.class).then_with(|| a.id.cmp(&b.id)));
    ConsistencyReport {
        min_occurrences,
        rows,
    }
}

impl ConsistencyReport {
    pub fn count(&self, class: ConsistencyClass) -> usize {
        self.rows.iter().filter(|r| r.class == class).count()
    }

    /// Columns `id,gold,modal_prediction,class,times_tested,predictions`,
    /// predictions joined with `;`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Internal(format!("writing consistency report: {e}"));
        w.write_record([
            "id",
            "gold",
            "modal_prediction",
            "class",
            "times_tested",
            "predictions",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            let preds: Vec<String> = r.predictions.iter().map(u8::to_string).collect();
            w.write_record([
                r.id.clone(),
                r.gold.to_string(),
                r.modal_prediction
                    .map(|p| p.to_string())
                    .unwrap_or_default(),
                r.class.as_str().to_string(),
                r.predictions.len().to_string(),
                preds.join(";"),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Internal(e.to_string()))
    }
}
